"""Exact finite-MDP machinery used to certify the successor-feature bounds.

Everything here is a closed-form or linear-algebra computation on a
:class:`FiniteMdp` with a fixed :class:`TabularPolicy`:

* the stationary state distribution (damped power iteration),
* action-conditioned successor features psi(s, a) by a direct linear solve,
* the expected features under the stationary distribution,
* certificates for the distance upper bound and its epsilon-relaxed form.

Sampling helpers (``mc_successor_features``, ``long_run_features``) exist to
cross-check the exact results by simulation.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import kernels

STOCHASTIC_TOL = 1e-12


class NoStationaryDistribution(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    P: np.ndarray      # (S, A, S)
    Phi: np.ndarray    # (S, A, d)
    R: np.ndarray      # (S, A)
    gamma: float

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        Phi = np.asarray(self.Phi, dtype=np.float64)
        R = np.asarray(self.R, dtype=np.float64)
        if Phi.ndim == 2:
            Phi = Phi[:, :, None]
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "R", R)
        S, A = R.shape
        if P.shape != (S, A, S) or Phi.shape[:2] != (S, A):
            raise ValueError(f"inconsistent shapes P{P.shape} Phi{Phi.shape} R{R.shape}")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Phi)) and np.all(np.isfinite(R))):
            raise ValueError("MDP tables must be finite")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > STOCHASTIC_TOL:
            raise ValueError("transition rows must be probability vectors")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def n_states(self) -> int:
        return self.R.shape[0]

    @property
    def n_actions(self) -> int:
        return self.R.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.Phi.shape[2]


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    pi: np.ndarray     # (S, A)

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=np.float64)
        object.__setattr__(self, "pi", pi)
        if pi.ndim != 2 or np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
            raise ValueError("policy rows must be probability vectors")


@dataclass(frozen=True)
class BoundCertificate:
    lhs: float
    rhs: float
    epsilon: float
    holds: bool


def random_mdp(rng, n_states, n_actions, feature_dim, gamma) -> FiniteMdp:
    """Dirichlet(1) transition rows; feature and reward tables uniform in [0, 1]."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    Phi = rng.uniform(0.0, 1.0, size=(n_states, n_actions, feature_dim))
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return FiniteMdp(P, Phi, R, gamma)


def random_policy(rng, n_states, n_actions) -> TabularPolicy:
    return TabularPolicy(rng.dirichlet(np.ones(n_actions), size=n_states))


def random_deterministic(rng, n_states, n_actions, feature_dim, gamma):
    """Deterministic dynamics and a deterministic policy (one-hot tables)."""
    nxt = rng.integers(n_states, size=(n_states, n_actions))
    P = np.zeros((n_states, n_actions, n_states))
    P[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], nxt] = 1.0
    Phi = rng.uniform(0.0, 1.0, size=(n_states, n_actions, feature_dim))
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    pi = np.zeros((n_states, n_actions))
    pi[np.arange(n_states), rng.integers(n_actions, size=n_states)] = 1.0
    return FiniteMdp(P, Phi, R, gamma), TabularPolicy(pi)


def state_chain(mdp: FiniteMdp, pi: TabularPolicy) -> np.ndarray:
    """M[s, s'] = sum_a pi(a|s) P(s'|s, a)."""
    return np.einsum("sa,sat->st", pi.pi, mdp.P)


def stationary_distribution(mdp: FiniteMdp, pi: TabularPolicy, tol=1e-14, max_iter=10**6):
    M = state_chain(mdp, pi)
    S = M.shape[0]
    rho, _, converged = kernels.power_iteration(M, np.full(S, 1.0 / S), tol, max_iter)
    if not converged:
        raise NoStationaryDistribution("no unique stationary distribution detected")
    return rho


def exact_successor_features(mdp: FiniteMdp, pi: TabularPolicy):
    """Solve psi = Phi + gamma * P Pi psi for the action-conditioned features.

    Returns ``(psi_sa, psi_s)`` with shapes (S, A, d) and (S, d), where
    ``psi_s[s] = sum_a pi(a|s) psi_sa[s, a]``.
    """
    S, A, d = mdp.Phi.shape
    # state form first: (I - gamma M) psi_s = sum_a pi Phi
    M = state_chain(mdp, pi)
    system = np.eye(S) - mdp.gamma * M
    rhs = np.einsum("sa,sad->sd", pi.pi, mdp.Phi)
    if np.linalg.cond(system) > 1e12:
        raise np.linalg.LinAlgError("successor-feature system is singular")
    psi_s = np.linalg.solve(system, rhs)
    psi_sa = mdp.Phi + mdp.gamma * np.einsum("sat,td->sad", mdp.P, psi_s)
    return psi_sa, psi_s


def bellman_residual(mdp: FiniteMdp, pi: TabularPolicy, psi_sa) -> float:
    nxt = np.einsum("sat,tb,tbd->sad", mdp.P, pi.pi, psi_sa)
    return float(np.max(np.abs(mdp.Phi + mdp.gamma * nxt - psi_sa)))


def expected_features(mdp: FiniteMdp, pi: TabularPolicy, rho=None) -> np.ndarray:
    if rho is None:
        rho = stationary_distribution(mdp, pi)
    return np.einsum("s,sa,sad->d", rho, pi.pi, mdp.Phi)


def discounted_distance_value(mdp: FiniteMdp, pi: TabularPolicy, z) -> np.ndarray:
    """E[sum_t gamma^t ||phi_t - z|| | s_0 = s]: the per-step distance that the
    no-successor-feature ablation penalises, as a value function over states."""
    z = np.asarray(z, dtype=np.float64)
    cost = np.linalg.norm(mdp.Phi - z, axis=2)
    M = state_chain(mdp, pi)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * M, np.sum(pi.pi * cost, axis=1))


def certify_prop1(mdp: FiniteMdp, pi: TabularPolicy, z) -> BoundCertificate:
    """||E_rho[phi] - z|| <= E_rho ||(1 - gamma) psi(s) - z||."""
    z = np.asarray(z, dtype=np.float64)
    rho = stationary_distribution(mdp, pi)
    _, psi_s = exact_successor_features(mdp, pi)
    lhs = float(np.linalg.norm(expected_features(mdp, pi, rho) - z))
    rhs = float(rho @ np.linalg.norm((1.0 - mdp.gamma) * psi_s - z, axis=1))
    return BoundCertificate(lhs, rhs, 0.0, bool(lhs <= rhs + 1e-9))


def is_deterministic(mdp: FiniteMdp, pi: TabularPolicy) -> bool:
    return bool(np.all((mdp.P == 0.0) | (mdp.P == 1.0)) and np.all((pi.pi == 0.0) | (pi.pi == 1.0)))


def _exact_psi_rational(mdp: FiniteMdp, pi: TabularPolicy):
    """psi(s, a) in exact rational arithmetic (small MDPs only)."""
    S, A, d = mdp.Phi.shape
    g = Fraction(mdp.gamma)
    Pf = [[[Fraction(mdp.P[s, a, t]) for t in range(S)] for a in range(A)] for s in range(S)]
    pif = [[Fraction(pi.pi[s, a]) for a in range(A)] for s in range(S)]
    phif = [[[Fraction(mdp.Phi[s, a, k]) for k in range(d)] for a in range(A)] for s in range(S)]
    # augmented system (I - g M) psi_s = sum_a pi Phi, Gauss-Jordan elimination
    rows = []
    for s in range(S):
        row = []
        for t in range(S):
            m = sum(pif[s][a] * Pf[s][a][t] for a in range(A))
            row.append((1 if s == t else 0) - g * m)
        row += [sum(pif[s][a] * phif[s][a][k] for a in range(A)) for k in range(d)]
        rows.append(row)
    for col in range(S):
        piv = next(r for r in range(col, S) if rows[r][col] != 0)
        rows[col], rows[piv] = rows[piv], rows[col]
        inv = 1 / rows[col][col]
        rows[col] = [v * inv for v in rows[col]]
        for r in range(S):
            if r != col and rows[r][col] != 0:
                f = rows[r][col]
                rows[r] = [v - f * w for v, w in zip(rows[r], rows[col])]
    psi_s = [rows[s][S:] for s in range(S)]
    return [[[phif[s][a][k] + g * sum(Pf[s][a][t] * psi_s[t][k] for t in range(S))
              for k in range(d)] for a in range(A)] for s in range(S)]


def epsilon_prop2(mdp: FiniteMdp, pi: TabularPolicy, rho=None, psi_sa=None) -> float:
    """Steady-state E||phi(s,a) + gamma psi(s',a') - psi(s,a)||.

    The expectation runs over s ~ rho, a ~ pi, s' ~ P, a' ~ pi.  Deterministic
    dynamics with a deterministic policy are evaluated in rational arithmetic,
    where the residual vanishes identically and the result is exactly 0.
    """
    if rho is None:
        rho = stationary_distribution(mdp, pi)
    S, A, d = mdp.Phi.shape
    if is_deterministic(mdp, pi):
        psi = _exact_psi_rational(mdp, pi)
        g = Fraction(mdp.gamma)
        total = 0.0
        for s in range(S):
            a = int(np.argmax(pi.pi[s]))
            s2 = int(np.argmax(mdp.P[s, a]))
            a2 = int(np.argmax(pi.pi[s2]))
            resid = [Fraction(mdp.Phi[s, a, k]) + g * psi[s2][a2][k] - psi[s][a][k] for k in range(d)]
            total += float(rho[s]) * float(sum(r * r for r in resid)) ** 0.5
        return float(total)
    if psi_sa is None:
        psi_sa, _ = exact_successor_features(mdp, pi)
    # resid[s, a, s', a'] = phi(s,a) + gamma psi(s',a') - psi(s,a)
    resid = (mdp.Phi[:, :, None, None, :] + mdp.gamma * psi_sa[None, None, :, :, :]
             - psi_sa[:, :, None, None, :])
    w = np.einsum("s,sa,sat,tb->satb", rho, pi.pi, mdp.P, pi.pi)
    return float(np.sum(w * np.linalg.norm(resid, axis=4)))


def certify_prop2(mdp: FiniteMdp, pi: TabularPolicy, z) -> BoundCertificate:
    """||E_rho[phi] - z|| <= E_{rho,pi}||(1 - gamma) psi(s,a) - z|| + epsilon."""
    z = np.asarray(z, dtype=np.float64)
    rho = stationary_distribution(mdp, pi)
    psi_sa, _ = exact_successor_features(mdp, pi)
    eps = epsilon_prop2(mdp, pi, rho, psi_sa)
    lhs = float(np.linalg.norm(expected_features(mdp, pi, rho) - z))
    gap = np.linalg.norm((1.0 - mdp.gamma) * psi_sa - z, axis=2)
    rhs = float(np.einsum("s,sa,sa->", rho, pi.pi, gap)) + float(eps)
    return BoundCertificate(lhs, rhs, float(eps), bool(lhs <= rhs + 1e-9))


# -- simulation cross-checks --------------------------------------------------


def _cdfs(mdp, pi):
    return np.cumsum(mdp.P, axis=2), np.cumsum(pi.pi, axis=1)


def mc_successor_features(mdp: FiniteMdp, pi: TabularPolicy, s, a, n_rollouts, horizon, seed,
                          chunk=10_000):
    """Monte-Carlo discounted feature sums from (s, a); returns (mean, stderr)."""
    p_cdf, pi_cdf = _cdfs(mdp, pi)
    rng = np.random.default_rng(seed)
    sums = []
    for start in range(0, n_rollouts, chunk):
        n = min(chunk, n_rollouts - start)
        u = rng.random((n, horizon, 2))
        s0 = np.full(n, s, dtype=np.int64)
        a0 = np.full(n, a, dtype=np.int64)
        sums.append(kernels.discounted_rollouts(p_cdf, pi_cdf, mdp.Phi, mdp.gamma, s0, a0, u))
    x = np.concatenate(sums)
    return x.mean(axis=0), x.std(axis=0, ddof=1) / np.sqrt(len(x))


def long_run_features(mdp: FiniteMdp, pi: TabularPolicy, steps, seed, s0=0, n_batches=100):
    """Empirical (1/T) sum phi_t of one long chain; returns (mean, batch-means stderr)."""
    p_cdf, pi_cdf = _cdfs(mdp, pi)
    u = np.random.default_rng(seed).random((steps, 2))
    means = kernels.chain_batch_means(p_cdf, pi_cdf, mdp.Phi, s0, u, steps // n_batches)
    return means.mean(axis=0), means.std(axis=0, ddof=1) / np.sqrt(len(means))
