"""Model-free skill-conditioned actor-critic with a successor-feature constraint.

The learner keeps four kinds of networks, all :class:`~qdac.approx.MlpParams`:

``actor``     (s, z) -> mean and log-std of a tanh-squashed Gaussian
``q1, q2``    (s, a, z) -> scalar return estimate, with Polyak targets
``psi``       (s, a, z) -> discounted feature sum, with a Polyak target
``lagrange``  (s, z) -> weight in (0, 1) trading return against the skill

The actor maximises ``(1 - lam) Q - lam ||(1 - gamma) psi - z|| - beta log pi``
with ``lam`` treated as a constant; ``lam`` itself is a classifier trained to
predict whether the skill constraint is currently violated.

Ablation modes swap pieces out: ``NO_SF`` replaces psi by a critic xi of the
discounted per-step distance ``||phi - z||`` and penalises xi directly,
``FIXED_LAMBDA`` and ``UVFA`` pin lam, and ``PLAIN_SAC`` drops skills entirely.

The psi and xi heads predict in units of ``1 / (1 - gamma)``: the network
outputs a per-step average which is multiplied by that factor, so targets are
O(1) for the optimiser.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .approx import (
    AdamState,
    MlpParams,
    MlpSpec,
    NonFiniteError,
    adam_step,
    adam_update,
    load_params,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    mlp_init,
    save_params,
    soft_update,
)

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG2 = math.log(2.0)

MODES = ("QDAC", "NO_SF", "FIXED_LAMBDA", "UVFA", "PLAIN_SAC")
DEFAULT_LAMBDA0 = {"FIXED_LAMBDA": 0.5, "UVFA": 0.66}

LOG_FIELDS = ("step", "q_loss", "sf_loss", "lambda_loss", "actor_loss", "lambda_mean",
              "beta", "episode_return", "psi_max")


class NumericalError(FloatingPointError):
    pass


@dataclass(frozen=True)
class QdacConfig:
    mode: str = "QDAC"
    gamma: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    batch_size: int = 32
    relabel: bool = True
    hidden: tuple = (32, 32)
    buffer_capacity: int = 200_000
    total_steps: int = 200_000
    warmup_steps: int = 1000
    target_entropy: Optional[float] = None   # None: -action_dim
    init_log_beta: float = 0.0
    lambda0: Optional[float] = None          # None: mode default
    delta: Optional[float] = None            # None: taken from the env
    log_every: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.lr <= 0 or self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("lr, batch_size and buffer_capacity must be positive")
        if self.lambda0 is not None and not 0.0 <= self.lambda0 <= 1.0:
            raise ValueError("lambda0 must lie in [0, 1]")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    # mode switches
    @property
    def uses_skills(self) -> bool:
        return self.mode != "PLAIN_SAC"

    @property
    def uses_sf(self) -> bool:
        return self.mode in ("QDAC", "FIXED_LAMBDA")

    @property
    def uses_xi(self) -> bool:
        return self.mode in ("NO_SF", "UVFA")

    @property
    def learns_lambda(self) -> bool:
        return self.mode in ("QDAC", "NO_SF")

    @property
    def pinned_lambda(self) -> Optional[float]:
        if self.mode == "PLAIN_SAC":
            return 0.0
        if self.mode in DEFAULT_LAMBDA0:
            return DEFAULT_LAMBDA0[self.mode] if self.lambda0 is None else self.lambda0
        return None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QdacConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


# -- replay ---------------------------------------------------------------------


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    phi: np.ndarray
    s_next: np.ndarray
    z: np.ndarray
    done: bool


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    s_next: np.ndarray
    z: np.ndarray
    done: np.ndarray

    def __len__(self):
        return self.s.shape[0]

    @classmethod
    def from_transitions(cls, transitions) -> "Batch":
        return cls(
            np.array([t.s for t in transitions], dtype=np.float64),
            np.array([t.a for t in transitions], dtype=np.float64),
            np.array([t.r for t in transitions], dtype=np.float64),
            np.array([t.phi for t in transitions], dtype=np.float64).reshape(len(transitions), -1),
            np.array([t.s_next for t in transitions], dtype=np.float64),
            np.array([t.z for t in transitions], dtype=np.float64).reshape(len(transitions), -1),
            np.array([t.done for t in transitions], dtype=np.float64),
        )


class ReplayBuffer:
    """Ring buffer over preallocated arrays with uniform sampling."""

    def __init__(self, capacity, obs_dim, action_dim, feature_dim, skill_dim):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.phi = np.zeros((capacity, feature_dim))
        self.s_next = np.zeros((capacity, obs_dim))
        self.z = np.zeros((capacity, skill_dim))
        self.done = np.zeros(capacity)
        self.inserted = 0

    def __len__(self):
        return min(self.inserted, self.capacity)

    def add(self, t: Transition) -> None:
        i = self.inserted % self.capacity
        self.s[i] = t.s
        self.a[i] = t.a
        self.r[i] = t.r
        self.phi[i] = t.phi
        self.s_next[i] = t.s_next
        self.z[i] = t.z
        self.done[i] = float(t.done)
        self.inserted += 1

    def sample(self, n: int, rng) -> Batch:
        if len(self) == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(len(self), size=n)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.phi[idx], self.s_next[idx],
                     self.z[idx], self.done[idx])


def relabel_batch(batch: Batch, skill_low, skill_high, rng) -> Batch:
    """Append a copy of ``batch`` whose skills are redrawn uniformly from the box."""
    z_new = rng.uniform(skill_low, skill_high, size=batch.z.shape)
    cat = np.concatenate
    return Batch(cat([batch.s, batch.s]), cat([batch.a, batch.a]), cat([batch.r, batch.r]),
                 cat([batch.phi, batch.phi]), cat([batch.s_next, batch.s_next]),
                 cat([batch.z, z_new]), cat([batch.done, batch.done]))


# -- networks --------------------------------------------------------------------


@dataclass
class QdacNetworks:
    actor: MlpParams
    q1: MlpParams
    q2: MlpParams
    q1_target: MlpParams
    q2_target: MlpParams
    psi: Optional[MlpParams]
    psi_target: Optional[MlpParams]
    lagrange: Optional[MlpParams]
    log_beta: float
    action_dim: int
    skill_dim: int
    gamma: float

    @property
    def beta(self) -> float:
        return math.exp(self.log_beta)

    @property
    def psi_scale(self) -> float:
        return 1.0 / (1.0 - self.gamma)

    def named(self) -> dict:
        out = {k: getattr(self, k) for k in ("actor", "q1", "q2", "q1_target", "q2_target",
                                              "psi", "psi_target", "lagrange")}
        return {k: v for k, v in out.items() if v is not None}


def build_networks(obs_dim, action_dim, feature_dim, cfg: QdacConfig, seed) -> QdacNetworks:
    d = feature_dim if cfg.uses_skills else 0
    h = cfg.hidden
    seeds = np.random.SeedSequence(seed).generate_state(5)
    actor = mlp_init(MlpSpec((obs_dim + d, *h, 2 * action_dim)), int(seeds[0]))
    q_spec = MlpSpec((obs_dim + action_dim + d, *h, 1))
    q1 = mlp_init(q_spec, int(seeds[1]))
    q2 = mlp_init(q_spec, int(seeds[2]))
    psi = lagrange = None
    if cfg.uses_sf or cfg.uses_xi:
        out = feature_dim if cfg.uses_sf else 1
        psi = mlp_init(MlpSpec((obs_dim + action_dim + d, *h, out)), int(seeds[3]))
    if cfg.learns_lambda:
        lagrange = mlp_init(MlpSpec((obs_dim + d, *h, 1), output_activation="sigmoid"),
                            int(seeds[4]))
    return QdacNetworks(
        actor, q1, q2, q1.copy(), q2.copy(), psi, None if psi is None else psi.copy(), lagrange,
        float(cfg.init_log_beta), action_dim, d, cfg.gamma,
    )


@dataclass
class ActorSample:
    a: np.ndarray
    log_prob: np.ndarray
    std: np.ndarray
    eps: np.ndarray
    clamp_mask: np.ndarray
    x: np.ndarray
    cache: list


def _softplus(x):
    return np.logaddexp(0.0, x)


def actor_sample(actor: MlpParams, s, z, eps, action_dim: int) -> ActorSample:
    x = np.concatenate([s, z], axis=1)
    out, cache = mlp_forward_cached(actor, x)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite actor output")
    mu = out[:, :action_dim]
    raw = out[:, action_dim:]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    u = mu + std * eps
    a = np.tanh(u)
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
    log_prob = np.sum(-0.5 * eps * eps - log_std - HALF_LOG_2PI
                      - 2.0 * (LOG2 - u - _softplus(-2.0 * u)), axis=1)
    mask = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
    return ActorSample(a, log_prob, std, eps, mask, x, cache)


def sample_action(nets: QdacNetworks, s, z, rng, deterministic=False):
    """Draw ``a = tanh(mu + sigma * eps)``; returns ``(a, log_prob)``.

    Accepts a single observation or a batch of rows.
    """
    s = np.asarray(s, dtype=np.float64)
    single = s.ndim == 1
    s2 = np.atleast_2d(s)
    z2 = np.asarray(z, dtype=np.float64).reshape(s2.shape[0], nets.skill_dim)
    shape = (s2.shape[0], nets.action_dim)
    eps = np.zeros(shape) if deterministic else rng.standard_normal(shape)
    smp = actor_sample(nets.actor, s2, z2, eps, nets.action_dim)
    if single:
        return smp.a[0], float(smp.log_prob[0])
    return smp.a, smp.log_prob


def _sa_input(s, a, z):
    return np.concatenate([s, a, z], axis=1)


def lambda_values(nets: QdacNetworks, cfg: QdacConfig, s, z) -> np.ndarray:
    pinned = cfg.pinned_lambda
    if pinned is not None:
        return np.full(s.shape[0], pinned)
    return mlp_forward(nets.lagrange, np.concatenate([s, z], axis=1))[:, 0]


def constraint_gap(nets: QdacNetworks, cfg: QdacConfig, s, a, z) -> np.ndarray:
    """Per-sample quantity compared against delta for the lambda label."""
    out = mlp_forward(nets.psi, _sa_input(s, a, z))
    if cfg.uses_sf:
        return np.linalg.norm(out - z, axis=1)   # out is (1 - gamma) psi
    return out[:, 0]                              # (1 - gamma) xi


# -- losses ------------------------------------------------------------------------
# Each returns (loss, gradient(s), info).  Gradients are of the batch-mean loss.


def lagrange_loss(nets: QdacNetworks, batch: Batch, cfg: QdacConfig, delta: float,
                  eps=None, sample: Optional[ActorSample] = None):
    if sample is None:
        sample = actor_sample(nets.actor, batch.s, batch.z, eps, nets.action_dim)
    y = (constraint_gap(nets, cfg, batch.s, sample.a, batch.z) > delta).astype(np.float64)
    x = np.concatenate([batch.s, batch.z], axis=1)
    lam, cache = mlp_forward_cached(nets.lagrange, x)
    lam = lam[:, 0]
    n = len(batch)
    lc = np.clip(lam, 1e-12, 1.0 - 1e-12)
    loss = float(np.mean(-(1.0 - y) * np.log1p(-lc) - y * np.log(lc)))
    # d loss / d lam; the sigmoid derivative inside mlp_backward turns this into (lam - y) / n
    up = (lam - y) / np.maximum(lam * (1.0 - lam), 1e-300) / n
    grad, _ = mlp_backward(nets.lagrange, x, up[:, None], cache, input_grad=False)
    return loss, grad, {"lambda_mean": float(lam.mean()), "violation": float(y.mean())}


def next_sample(nets: QdacNetworks, batch: Batch, eps) -> ActorSample:
    return actor_sample(nets.actor, batch.s_next, batch.z, eps, nets.action_dim)


def q_loss(nets: QdacNetworks, batch: Batch, cfg: QdacConfig, eps=None,
           sample: Optional[ActorSample] = None):
    if sample is None:
        sample = next_sample(nets, batch, eps)
    xn = _sa_input(batch.s_next, sample.a, batch.z)
    qn = np.minimum(mlp_forward(nets.q1_target, xn)[:, 0], mlp_forward(nets.q2_target, xn)[:, 0])
    y = batch.r + cfg.gamma * (1.0 - batch.done) * (qn - nets.beta * sample.log_prob)
    x = _sa_input(batch.s, batch.a, batch.z)
    n = len(batch)
    loss = 0.0
    grads = []
    for net in (nets.q1, nets.q2):
        q, cache = mlp_forward_cached(net, x)
        err = q[:, 0] - y
        loss += float(np.mean(err * err))
        grads.append(mlp_backward(net, x, (2.0 / n) * err[:, None], cache, input_grad=False)[0])
    return loss, tuple(grads), {}


def sf_loss(nets: QdacNetworks, batch: Batch, cfg: QdacConfig, eps=None,
            sample: Optional[ActorSample] = None):
    """Successor-feature regression (or the xi distance critic in NO_SF/UVFA)."""
    if sample is None:
        sample = next_sample(nets, batch, eps)
    scale = nets.psi_scale
    xn = _sa_input(batch.s_next, sample.a, batch.z)
    nxt = scale * mlp_forward(nets.psi_target, xn)
    if cfg.uses_sf:
        per_step = batch.phi
    else:
        per_step = np.linalg.norm(batch.phi - batch.z, axis=1, keepdims=True)
    y = per_step + cfg.gamma * (1.0 - batch.done)[:, None] * nxt
    x = _sa_input(batch.s, batch.a, batch.z)
    out, cache = mlp_forward_cached(nets.psi, x)
    err = scale * out - y
    n = len(batch)
    loss = float(np.mean(np.sum(err * err, axis=1)))
    grad, _ = mlp_backward(nets.psi, x, (2.0 * scale / n) * err, cache, input_grad=False)
    return loss, grad, {"psi_max": float(np.max(np.abs(scale * out)))}


def actor_loss(nets: QdacNetworks, batch: Batch, cfg: QdacConfig, eps=None,
               sample: Optional[ActorSample] = None):
    """Loss = mean[beta log pi - (1 - lam) min Q + lam * penalty], lam held fixed."""
    if sample is None:
        sample = actor_sample(nets.actor, batch.s, batch.z, eps, nets.action_dim)
    m = nets.action_dim
    n = len(batch)
    beta = nets.beta
    a = sample.a
    lam = lambda_values(nets, cfg, batch.s, batch.z)
    xa = _sa_input(batch.s, a, batch.z)
    q1, c1 = mlp_forward_cached(nets.q1, xa)
    q2, c2 = mlp_forward_cached(nets.q2, xa)
    pick1 = q1[:, 0] <= q2[:, 0]
    qmin = np.where(pick1, q1[:, 0], q2[:, 0])
    w_q = -(1.0 - lam) / n
    _, g1 = mlp_backward(nets.q1, xa, (w_q * pick1)[:, None], c1)
    _, g2 = mlp_backward(nets.q2, xa, (w_q * ~pick1)[:, None], c2)
    g_a = g1[:, -(m + nets.skill_dim):][:, :m] + g2[:, -(m + nets.skill_dim):][:, :m]
    penalty = np.zeros(n)
    if cfg.uses_sf or cfg.uses_xi:
        out, cp = mlp_forward_cached(nets.psi, xa)
        if cfg.uses_sf:
            diff = out - batch.z                              # (1 - gamma) psi - z
            penalty = np.linalg.norm(diff, axis=1)
            up = diff / np.maximum(penalty, 1e-12)[:, None]
        else:
            penalty = nets.psi_scale * out[:, 0]
            up = np.full((n, 1), nets.psi_scale)
        _, gp = mlp_backward(nets.psi, xa, (lam / n)[:, None] * up, cp)
        g_a = g_a + gp[:, -(m + nets.skill_dim):][:, :m]
    loss = float(np.mean(beta * sample.log_prob - (1.0 - lam) * qmin + lam * penalty))
    # chain through a = tanh(u), u = mu + std * eps; d log pi / du = 2a at fixed eps
    dl_du = (2.0 * beta / n) * a + g_a * (1.0 - a * a)
    dl_dls = (dl_du * sample.std * sample.eps - beta / n) * sample.clamp_mask
    up_actor = np.concatenate([dl_du, dl_dls], axis=1)
    grad, _ = mlp_backward(nets.actor, sample.x, up_actor, sample.cache, input_grad=False)
    return loss, grad, {"log_prob": sample.log_prob}


def temperature_loss(log_beta: float, log_prob, target_entropy: float):
    """Loss = mean[-beta (log pi + target)]; gradient taken in log beta."""
    beta = math.exp(log_beta)
    m = float(np.mean(np.asarray(log_prob) + target_entropy))
    return -beta * m, -beta * m, {}


# -- agent -------------------------------------------------------------------------


def _check(*vals):
    for v in vals:
        if not np.all(np.isfinite(v)):
            raise NumericalError("non-finite loss or gradient")


class QdacAgent:
    def __init__(self, env_spec, cfg: QdacConfig, obs_dim=None):
        self.env_spec = env_spec
        obs_dim = env_spec.obs_dim if obs_dim is None else obs_dim
        delta = env_spec.delta if cfg.delta is None else cfg.delta
        target = -float(env_spec.action_dim) if cfg.target_entropy is None else cfg.target_entropy
        self.cfg = dataclasses.replace(cfg, delta=float(delta), target_entropy=float(target))
        self.obs_dim = obs_dim
        self.nets = build_networks(obs_dim, env_spec.action_dim, env_spec.feature_dim,
                                   self.cfg, cfg.seed)
        self.opt = {k: AdamState.zeros(v.flat.size) for k, v in self.nets.named().items()
                    if not k.endswith("_target")}
        self.beta_opt = AdamState.zeros(1)
        self.updates = 0

    @property
    def skill_low(self):
        return self.env_spec.skill_low if self.cfg.uses_skills else np.zeros(0)

    @property
    def skill_high(self):
        return self.env_spec.skill_high if self.cfg.uses_skills else np.zeros(0)

    def _step(self, name, grad):
        params, self.opt[name] = adam_step(getattr(self.nets, name), grad, self.opt[name],
                                           self.cfg.lr)
        setattr(self.nets, name, params)

    def update(self, batch: Batch, rng) -> dict:
        """One gradient step of every loss, then the target soft updates."""
        cfg, nets = self.cfg, self.nets
        if cfg.relabel and cfg.uses_skills:
            batch = relabel_batch(batch, self.skill_low, self.skill_high, rng)
        shape = (len(batch), nets.action_dim)
        eps_now = rng.standard_normal(shape)
        eps_next = rng.standard_normal(shape)
        info = {}
        try:
            now = actor_sample(nets.actor, batch.s, batch.z, eps_now, nets.action_dim)
            if cfg.learns_lambda:
                loss, g, extra = lagrange_loss(nets, batch, cfg, cfg.delta, sample=now)
                _check(loss, g)
                self._step("lagrange", g)
                info["lambda_loss"] = loss
                info["lambda_mean"] = extra["lambda_mean"]
            else:
                info["lambda_mean"] = float(cfg.pinned_lambda)
            nxt = next_sample(nets, batch, eps_next)
            loss, (g1, g2), _ = q_loss(nets, batch, cfg, sample=nxt)
            _check(loss, g1, g2)
            self._step("q1", g1)
            self._step("q2", g2)
            info["q_loss"] = loss
            if nets.psi is not None:
                loss, g, extra = sf_loss(nets, batch, cfg, sample=nxt)
                _check(loss, g)
                self._step("psi", g)
                info["sf_loss"] = loss
                info["psi_max"] = extra["psi_max"]
            loss, g, extra = actor_loss(nets, batch, cfg, sample=now)
            _check(loss, g)
            self._step("actor", g)
            info["actor_loss"] = loss
            _, gb, _ = temperature_loss(nets.log_beta, extra["log_prob"], cfg.target_entropy)
            _check(gb)
            lb, self.beta_opt = adam_update(np.array([nets.log_beta]), np.array([gb]),
                                            self.beta_opt, cfg.lr)
            nets.log_beta = float(lb[0])
        except NonFiniteError as exc:
            raise NumericalError(str(exc)) from exc
        nets.q1_target = soft_update(nets.q1_target, nets.q1, cfg.tau)
        nets.q2_target = soft_update(nets.q2_target, nets.q2, cfg.tau)
        if nets.psi is not None:
            nets.psi_target = soft_update(nets.psi_target, nets.psi, cfg.tau)
        self.updates += 1
        return info

    def policy(self, deterministic=False):
        """Frozen snapshot ``f(obs, z, rng) -> actions`` on batches of rows."""
        snap = dataclasses.replace(self.nets, actor=self.nets.actor.copy())
        skill_dim = snap.skill_dim

        def act(obs, z, rng):
            obs = np.atleast_2d(obs)
            z = np.asarray(z, dtype=np.float64).reshape(obs.shape[0], -1)[:, :skill_dim]
            return sample_action(snap, obs, z, rng, deterministic)[0]

        return act

    # -- checkpoints ------------------------------------------------------------
    def save(self, directory, extra: Optional[dict] = None) -> list:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for name, params in self.nets.named().items():
            path = directory / f"{name}.params"
            save_params(path, params, name)
            files.append(path.name)
        meta = {"config": self.cfg.to_dict(), "log_beta": self.nets.log_beta,
                "obs_dim": self.obs_dim, "env": self.env_spec.name, "updates": self.updates}
        meta.update(extra or {})
        (directory / "agent.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
        files.append("agent.json")
        return files


def load_agent(directory, env_spec) -> QdacAgent:
    directory = Path(directory)
    meta = json.loads((directory / "agent.json").read_text())
    agent = QdacAgent(env_spec, QdacConfig.from_dict(meta["config"]), obs_dim=meta["obs_dim"])
    for name in agent.nets.named():
        params, role = load_params(directory / f"{name}.params")
        if role != name or params.spec != getattr(agent.nets, name).spec:
            raise ValueError(f"checkpoint entry {name} does not match the configured networks")
        setattr(agent.nets, name, params)
    agent.nets.log_beta = float(meta["log_beta"])
    agent.updates = int(meta.get("updates", 0))
    return agent


# -- training loop -----------------------------------------------------------------


@dataclass
class TrainResult:
    agent: QdacAgent
    log: list
    episode_returns: list


def _mean(xs):
    return float(np.mean(xs)) if xs else float("nan")


def train(env, cfg: QdacConfig, log_path=None, checkpoint_dir=None, progress=None) -> TrainResult:
    """Run ``cfg.total_steps`` environment steps with one update per step.

    A skill is drawn uniformly at the start of every episode.  Episode ends
    come from the time limit only, so transitions are stored as
    non-terminal.  On a non-finite loss a diagnostic checkpoint is
    written to ``checkpoint_dir / "diagnostic"`` before re-raising.
    """
    spec = env.spec
    agent = QdacAgent(spec, cfg)
    cfg = agent.cfg
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    skill_dim = spec.feature_dim if cfg.uses_skills else 0
    buf = ReplayBuffer(cfg.buffer_capacity, agent.obs_dim, spec.action_dim, spec.feature_dim,
                       skill_dim)

    def new_episode():
        seed = int(rng.integers(2**31))
        o = env.reset_batch(1, seed)
        zz = rng.uniform(agent.skill_low, agent.skill_high)[None, :]
        return o, zz

    obs, z = new_episode()
    ep_ret = 0.0
    window = {k: [] for k in LOG_FIELDS[1:]}
    log, returns = [], []
    writer = fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
    try:
        for step in range(1, cfg.total_steps + 1):
            if step <= cfg.warmup_steps:
                action = rng.uniform(-1.0, 1.0, size=(1, spec.action_dim))
            else:
                action = sample_action(agent.nets, obs, z, rng)[0]
            next_obs, reward, feat, done = env.step_batch(action)
            buf.add(Transition(obs[0], action[0], float(reward[0]), feat[0], next_obs[0], z[0],
                               False))
            ep_ret += float(reward[0])
            obs = next_obs
            if len(buf) >= cfg.batch_size:
                try:
                    info = agent.update(buf.sample(cfg.batch_size, rng), rng)
                except NumericalError:
                    if checkpoint_dir is not None:
                        agent.save(Path(checkpoint_dir) / "diagnostic", {"failed_step": step})
                    raise
                for k, v in info.items():
                    window[k].append(v)
                window["beta"].append(agent.nets.beta)
            if done:
                returns.append(ep_ret)
                window["episode_return"].append(ep_ret)
                ep_ret = 0.0
                obs, z = new_episode()
            if step % cfg.log_every == 0 or step == cfg.total_steps:
                row = {"step": step}
                for k in LOG_FIELDS[1:]:
                    vals = window[k]
                    row[k] = (max(vals) if vals else float("nan")) if k == "psi_max" else _mean(vals)
                    vals.clear()
                log.append(row)
                if writer is not None:
                    writer.writerow([row["step"]] + [f"{row[k]:.17g}" for k in LOG_FIELDS[1:]])
                if progress is not None:
                    progress(row)
    finally:
        if fh is not None:
            fh.close()
    if checkpoint_dir is not None:
        agent.save(checkpoint_dir)
    return TrainResult(agent, log, returns)
