"""Reusing a trained skill-conditioned policy on perturbed dynamics.

Two harnesses:

* :func:`few_shot_select` evaluates every grid skill on each perturbation
  level and keeps the one with the best return, without any re-training.
* :func:`hierarchical_train` trains a skill-free SAC meta-controller whose
  actions are skills, each held for ``K`` low-level steps.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from . import agent as agent_mod
from .envs import EnvSpec, apply_perturbation, base_env, perturbation_from_dict
from .metrics import evaluate_grid


@dataclass
class AdaptationCurve:
    levels: list
    skills: np.ndarray     # (N_z, d)
    returns: np.ndarray    # (n_levels, N_z)
    distances: np.ndarray  # (n_levels, N_z)

    @property
    def best_index(self) -> np.ndarray:
        return np.argmax(self.returns, axis=1)   # first maximum wins ties

    @property
    def best_z(self) -> np.ndarray:
        return self.skills[self.best_index]

    @property
    def best_R(self) -> np.ndarray:
        return self.returns[np.arange(len(self.levels)), self.best_index]

    def write_csv(self, summary_path, table_path) -> None:
        dim = self.skills.shape[1]
        with open(summary_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level"] + [f"best_z{i}" for i in range(dim)] + ["best_R"])
            for lvl, z, r in zip(self.levels, self.best_z, self.best_R):
                w.writerow([f"{lvl:.17g}"] + [f"{v:.17g}" for v in z] + [f"{r:.17g}"])
        with open(table_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level"] + [f"z{i}" for i in range(dim)] + ["R", "d"])
            for li, lvl in enumerate(self.levels):
                for zi, z in enumerate(self.skills):
                    w.writerow([f"{lvl:.17g}"] + [f"{v:.17g}" for v in z]
                               + [f"{self.returns[li, zi]:.17g}", f"{self.distances[li, zi]:.17g}"])


def perturbation_family(kind: str, **fixed):
    """``level -> Perturbation`` for the factor-parameterised kinds."""
    def make(level):
        return perturbation_from_dict({"kind": kind, "factor": float(level), **fixed})
    return make


def few_shot_select(policy, env, perturbation, levels, skills, n_rollouts=10, seed=0):
    """Evaluate every skill at every level; ``perturbation(level)`` builds the
    wrapper for a level (see :func:`perturbation_family`)."""
    skills = np.atleast_2d(np.asarray(skills, dtype=np.float64))
    rets, dists = [], []
    for level in levels:
        penv = apply_perturbation(env, perturbation(level))
        recs = evaluate_grid(policy, penv, skills, n_rollouts, seed)
        rets.append([r.R for r in recs])
        dists.append([r.d for r in recs])
    return AdaptationCurve(list(levels), skills, np.array(rets), np.array(dists))


def params_digest(nets) -> str:
    h = hashlib.sha256()
    for name, p in sorted(nets.named().items()):
        h.update(name.encode())
        h.update(p.flat.tobytes())
    return h.hexdigest()


# -- hierarchy ---------------------------------------------------------------------


class MetaEnv:
    """Skill-selection environment on top of a frozen low-level policy.

    Observation: the full low-level state (for the point mass: x, y, vx, vy).  Action: a skill,
    clipped to the skill box.  Reward: x displacement over the ``K``
    low-level steps the skill is held for.
    """

    def __init__(self, low_policy, env, k: int = 10):
        self.low_policy = low_policy
        self.env = env
        self.k = int(k)
        low = base_env(env).spec
        self.low_spec = low
        probe = env.clone()
        probe.reset_batch(1, 0)
        state_dim = base_env(probe).state.shape[1]
        self.spec = EnvSpec(f"meta_{low.name}", obs_dim=state_dim, action_dim=low.feature_dim,
                            feature_dim=0, skill_lo=(), skill_hi=(),
                            episode_length=low.episode_length // self.k,
                            delta=low.delta, d_eval=low.d_eval)
        self.t = 0
        self.rng = None
        self._low_obs = None

    @property
    def state(self):
        return self.env.state

    def reset_batch(self, n: int, seed: int) -> np.ndarray:
        self._low_obs = self.env.reset_batch(n, seed)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
        self.t = 0
        return base_env(self.env).state.copy()

    def skill(self, meta_action) -> np.ndarray:
        return np.clip(np.asarray(meta_action, dtype=np.float64),
                       self.low_spec.skill_low, self.low_spec.skill_high)

    def step_batch(self, meta_action):
        z = self.skill(meta_action)
        x0 = base_env(self.env).state[:, 0].copy()
        for _ in range(self.k):
            act = self.low_policy(self._low_obs, z, self.rng)
            self._low_obs, _, _, _ = self.env.step_batch(act)
        self.t += 1
        x1 = base_env(self.env).state[:, 0]
        n = x1.shape[0]
        return base_env(self.env).state.copy(), x1 - x0, np.zeros((n, 0)), self.t >= self.spec.episode_length


def hierarchical_train(low_policy, env, meta_cfg: agent_mod.QdacConfig, k: int = 10,
                       log_path=None):
    """Train a ``PLAIN_SAC`` meta-controller; the low-level policy is only called."""
    if meta_cfg.mode != "PLAIN_SAC":
        raise ValueError("the meta-controller runs in PLAIN_SAC mode")
    meta_env = MetaEnv(low_policy, env, k)
    result = agent_mod.train(meta_env, meta_cfg, log_path=log_path)
    return result, meta_env


def meta_rollout(meta_policy, meta_env: MetaEnv, seed: int, deterministic_skill=None):
    """One episode; returns rows (t, x, y, z...) sampled at macro-step ends.

    ``deterministic_skill`` replaces the meta-controller by a constant skill.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 13]))
    obs = meta_env.reset_batch(1, seed)
    rows = [(0, float(obs[0, 0]), float(obs[0, 1]), *([float("nan")] * meta_env.spec.action_dim))]
    done = False
    while not done:
        if deterministic_skill is None:
            a = meta_policy(obs, np.zeros((1, 0)), rng)
        else:
            a = np.asarray(deterministic_skill, dtype=np.float64)[None, :]
        z = meta_env.skill(a)
        obs, _, _, done = meta_env.step_batch(a)
        rows.append((meta_env.t * meta_env.k, float(obs[0, 0]), float(obs[0, 1]),
                     *(float(v) for v in z[0])))
    return rows


def write_trace_csv(path, rows) -> None:
    dim = len(rows[0]) - 3
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y"] + [f"z{i}" for i in range(dim)])
        for t, x, y, *z in rows:
            w.writerow([t, f"{x:.17g}", f"{y:.17g}"] + ["" if v != v else f"{v:.17g}" for v in z])
