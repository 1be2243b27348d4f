"""Desk-scale locomotion analogs that emit a reward and a feature vector.

``PointVelocityEnv``: a point mass whose features are its planar velocity,
so skills with negative x-velocity directly oppose the forward reward.

``HopperLiteEnv``: a one-legged hopper whose feature is the ground-contact
indicator; a skill is a contact *rate* that can only be met by hopping.  Its
state carries a stance counter (steps since touchdown) so that the policy
can time its take-off.  The vertical thrust maps [-1, 1] affinely onto a
launch speed in [0, jump_speed], so every action value changes the jump.

Both environments are batched: ``reset_batch``/``step_batch`` advance ``n``
independent copies at once through the kernels in :mod:`qdac.kernels`, and
the single-copy ``reset``/``step`` API is a thin view on a batch of one.
Observations exclude the absolute position (the usual locomotion
convention); the full state is available as ``env.state``.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels

JITTER = 0.01
STANCE_CAP = 1.0


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    feature_dim: int
    skill_lo: tuple
    skill_hi: tuple
    episode_length: int
    delta: float
    d_eval: float

    def __post_init__(self):
        if not self.delta < self.d_eval:
            raise ValueError("delta must be smaller than d_eval")
        if len(self.skill_lo) != self.feature_dim or len(self.skill_hi) != self.feature_dim:
            raise ValueError("skill box must have one interval per feature")

    @property
    def skill_low(self) -> np.ndarray:
        return np.asarray(self.skill_lo, dtype=np.float64)

    @property
    def skill_high(self) -> np.ndarray:
        return np.asarray(self.skill_hi, dtype=np.float64)


@dataclass
class StepResult:
    next_obs: np.ndarray
    reward: float
    features: np.ndarray
    done: bool


class _Env:
    """Shared batching logic; subclasses define the physics."""

    spec: EnvSpec

    def __init__(self):
        self.state = None
        self.t = 0

    # -- batched API ---------------------------------------------------
    def reset_batch(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.state = self._initial_state(rng, n)
        self.t = 0
        return self._obs(self.state)

    def step_batch(self, actions):
        if self.state is None:
            raise RuntimeError("call reset before step")
        if self.t >= self.spec.episode_length:
            raise RuntimeError("episode finished; call reset")
        a = np.asarray(actions, dtype=np.float64).reshape(self.state.shape[0], self.spec.action_dim)
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite action")
        a = np.clip(a, -1.0, 1.0)
        self.state, reward, feat = self._dynamics(self.state, a)
        self.t += 1
        done = self.t >= self.spec.episode_length
        return self._obs(self.state), reward, feat, done

    # -- single-copy API -----------------------------------------------
    def reset(self, seed: int) -> np.ndarray:
        return self.reset_batch(1, seed)[0]

    def step(self, action) -> StepResult:
        obs, reward, feat, done = self.step_batch(np.asarray(action, dtype=np.float64)[None, :])
        return StepResult(obs[0], float(reward[0]), feat[0], done)

    def clone(self):
        other = dataclasses.replace(self)
        other.state = None if self.state is None else self.state.copy()
        other.t = self.t
        return other


@dataclass(eq=False)
class PointVelocityEnv(_Env):
    dt: float = 0.05
    a_max: float = 2.0
    v_max: float = 1.0
    drag: float = 0.5
    energy_cost: float = 0.1
    episode_length: int = 200
    wall_x: float = np.inf
    gap_lo: float = -np.inf
    gap_hi: float = np.inf

    def __post_init__(self):
        _Env.__init__(self)
        self.spec = EnvSpec(
            "point_velocity", obs_dim=2, action_dim=2, feature_dim=2,
            skill_lo=(-1.0, -1.0), skill_hi=(1.0, 1.0),
            episode_length=self.episode_length, delta=0.02, d_eval=0.2,
        )

    def _initial_state(self, rng, n):
        state = np.zeros((n, 4))
        state[:, 2:] = rng.uniform(-JITTER, JITTER, size=(n, 2))
        return state

    def _obs(self, state):
        return state[:, 2:].copy()

    def _dynamics(self, state, a):
        return kernels.point_step(
            state, a, self.dt, self.a_max, self.v_max, self.drag, self.energy_cost,
            self.wall_x, self.gap_lo, self.gap_hi,
        )


@dataclass(eq=False)
class HopperLiteEnv(_Env):
    dt: float = 0.02
    gravity: float = 9.8
    jump_speed: float = 2.0
    a_fwd: float = 2.0
    drag: float = 1.0
    energy_cost: float = 0.1
    episode_length: int = 200

    def __post_init__(self):
        _Env.__init__(self)
        self.spec = EnvSpec(
            "hopper_lite", obs_dim=4, action_dim=2, feature_dim=1,
            skill_lo=(0.0,), skill_hi=(1.0,),
            episode_length=self.episode_length, delta=0.02, d_eval=0.15,
        )

    def _initial_state(self, rng, n):
        state = np.zeros((n, 5))
        state[:, 1] = rng.uniform(0.0, JITTER, size=n)
        state[:, 2:4] = rng.uniform(-JITTER, JITTER, size=(n, 2))
        return state

    def _obs(self, state):
        # (h, vx, vh, time on the ground in seconds, capped)
        obs = state[:, 1:].copy()
        obs[:, 3] = np.minimum(obs[:, 3] * self.dt, STANCE_CAP)
        return obs

    def _dynamics(self, state, a):
        return kernels.hopper_step(
            state, a, self.dt, self.gravity, self.jump_speed, self.a_fwd, self.drag,
            self.energy_cost,
        )


ENVS = {"point_velocity": PointVelocityEnv, "hopper_lite": HopperLiteEnv}


def make_env(name: str, **params):
    try:
        return ENVS[name](**params)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None


# -- perturbations ------------------------------------------------------------


@dataclass(frozen=True)
class ActionScale:
    index: int
    factor: float


@dataclass(frozen=True)
class GravityScale:
    factor: float


@dataclass(frozen=True)
class DragScale:
    factor: float


@dataclass(frozen=True)
class Wall:
    """Vertical wall at ``x_position``; crossing is only possible through the
    opening ``|y - gap_center| < gap_halfwidth``."""

    x_position: float
    gap_halfwidth: float
    gap_center: float = 1.5


Perturbation = Union[ActionScale, GravityScale, DragScale, Wall]


class ActionScaleWrapper:
    """Multiplies one action channel by ``factor`` before the dynamics see it."""

    def __init__(self, env, index: int, factor: float):
        if not 0 <= index < env.spec.action_dim:
            raise ValueError(f"action index {index} out of range")
        self.env = env
        self.index = index
        self.factor = float(factor)

    @property
    def spec(self):
        return self.env.spec

    @property
    def state(self):
        return self.env.state

    @property
    def t(self):
        return self.env.t

    def reset_batch(self, n, seed):
        return self.env.reset_batch(n, seed)

    def reset(self, seed):
        return self.env.reset(seed)

    def _scale(self, actions):
        a = np.clip(np.array(actions, dtype=np.float64), -1.0, 1.0)
        a[..., self.index] *= self.factor
        return a

    def step_batch(self, actions):
        return self.env.step_batch(self._scale(actions))

    def step(self, action):
        return self.env.step(self._scale(action))

    def clone(self):
        return ActionScaleWrapper(self.env.clone(), self.index, self.factor)


def apply_perturbation(env, p: Perturbation):
    """Return a perturbed copy of ``env``; the reward definition is untouched."""
    if isinstance(p, ActionScale):
        return ActionScaleWrapper(env.clone(), p.index, p.factor)
    if isinstance(env, ActionScaleWrapper):
        return ActionScaleWrapper(apply_perturbation(env.env, p), env.index, env.factor)
    if isinstance(p, GravityScale):
        if not isinstance(env, HopperLiteEnv):
            raise ValueError("gravity_scale only applies to hopper_lite")
        return dataclasses.replace(env, gravity=env.gravity * p.factor)
    if isinstance(p, DragScale):
        if not isinstance(env, PointVelocityEnv):
            raise ValueError("drag_scale only applies to point_velocity")
        return dataclasses.replace(env, drag=env.drag * p.factor)
    if isinstance(p, Wall):
        if not isinstance(env, PointVelocityEnv):
            raise ValueError("wall only applies to point_velocity")
        return dataclasses.replace(
            env, wall_x=p.x_position,
            gap_lo=p.gap_center - p.gap_halfwidth, gap_hi=p.gap_center + p.gap_halfwidth,
        )
    raise TypeError(f"unknown perturbation {p!r}")


def perturbation_from_dict(d: dict) -> Perturbation:
    kinds = {"action_scale": ActionScale, "gravity_scale": GravityScale,
             "drag_scale": DragScale, "wall": Wall}
    d = dict(d)
    kind = d.pop("kind")
    if kind not in kinds:
        raise ValueError(f"unknown perturbation kind {kind!r}")
    return kinds[kind](**d)


def base_env(env):
    while isinstance(env, ActionScaleWrapper):
        env = env.env
    return env


# -- trajectory dumps ---------------------------------------------------------


def rollout_trajectory(env, policy, z, seed: int):
    """Roll one episode with ``policy(obs, z, rng) -> actions`` (batched
    signature) and return per-step rows for :func:`write_trajectory_csv`."""
    rng = np.random.default_rng(seed)
    obs = env.reset_batch(1, seed)
    zb = np.asarray(z, dtype=np.float64)[None, :]
    rows = []
    done = False
    while not done:
        t = env.t
        action = np.clip(policy(obs, zb, rng), -1.0, 1.0)
        next_obs, reward, feat, done = env.step_batch(action)
        rows.append((t, obs[0].copy(), action[0].copy(), float(reward[0]), feat[0].copy(), done))
        obs = next_obs
    return rows


def write_trajectory_csv(path, rows) -> None:
    if not rows:
        raise ValueError("empty trajectory")
    _, obs, act, _, feat, _ = rows[0]
    header = (["t"] + [f"obs{i}" for i in range(len(obs))] + [f"action{i}" for i in range(len(act))]
              + ["reward"] + [f"feature{i}" for i in range(len(feat))] + ["done"])
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for t, obs, act, reward, feat, done in rows:
            w.writerow([t, *(repr(float(v)) for v in obs), *(repr(float(v)) for v in act),
                        repr(reward), *(repr(float(v)) for v in feat), int(done)])
