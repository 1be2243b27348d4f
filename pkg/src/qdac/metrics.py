"""Quality-diversity evaluation over a lattice of skills.

A policy is evaluated on every grid skill by rolling it out and comparing the
episode-average feature vector to the requested skill.  The resulting
:class:`EvalRecord` list feeds the distance/performance profiles and scores.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EvalRecord:
    z: tuple
    d: float
    R: float
    n_rollouts: int
    R_std: float = 0.0


def skill_grid(low, high, per_dim: int = 21, cap: int = 441) -> np.ndarray:
    """Regular lattice over the box, first coordinate varying slowest.

    The per-dimension count is reduced until the total fits under ``cap``.
    """
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    k = per_dim
    while k > 1 and k ** low.size > cap:
        k -= 1
    axes = [np.linspace(lo, hi, k) for lo, hi in zip(low, high)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def evaluate_grid(policy, env, skills, n_rollouts: int = 10, seed: int = 0) -> list:
    """Roll ``n_rollouts`` episodes per skill, all skills batched together.

    ``policy(obs, z, rng)`` maps row batches to actions.  The environment is
    cloned so the caller's instance is untouched.
    """
    skills = np.atleast_2d(np.asarray(skills, dtype=np.float64))
    n_z = skills.shape[0]
    env = env.clone()
    n = n_z * n_rollouts
    z = np.repeat(skills, n_rollouts, axis=0)
    obs = env.reset_batch(n, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    feat_sum = np.zeros((n, env.spec.feature_dim))
    ret = np.zeros(n)
    steps = 0
    done = False
    while not done:
        obs, r, phi, done = env.step_batch(policy(obs, z, rng))
        feat_sum += phi
        ret += r
        steps += 1
    dist = np.linalg.norm(feat_sum / steps - z, axis=1).reshape(n_z, n_rollouts)
    ret = ret.reshape(n_z, n_rollouts)
    sd = ret.std(axis=1, ddof=1) if n_rollouts > 1 else np.zeros(n_z)
    return [EvalRecord(tuple(float(v) for v in skills[i]), float(dist[i].mean()),
                       float(ret[i].mean()), n_rollouts, float(sd[i])) for i in range(n_z)]


def evaluate_skill(policy, env, z, n_rollouts: int = 10, seed: int = 0) -> EvalRecord:
    return evaluate_grid(policy, env, np.asarray(z, dtype=np.float64)[None, :], n_rollouts,
                         seed)[0]


def _arrays(records):
    if len(records) == 0:
        raise ValueError("no records")
    return (np.array([r.d for r in records], dtype=np.float64),
            np.array([r.R for r in records], dtype=np.float64))


def distance_profile(records, d_grid) -> np.ndarray:
    d, _ = _arrays(records)
    q = np.asarray(d_grid, dtype=np.float64)
    return np.count_nonzero(d[None, :] < q[:, None], axis=1) / d.size


def performance_profile(records, d_eval: float, R_grid) -> np.ndarray:
    d, R = _arrays(records)
    q = np.asarray(R_grid, dtype=np.float64)
    ok = d < d_eval
    return np.count_nonzero(ok[None, :] & (R[None, :] > q[:, None]), axis=1) / d.size


def scores(records, d_eval: float) -> tuple:
    """``(distance_score, performance_score)``; both are averages over all skills."""
    d, R = _arrays(records)
    return float(-d.sum() / d.size), float(np.where(d < d_eval, R, 0.0).sum() / d.size)


def coverage(records, d_eval: float, mask=None) -> float:
    """Fraction of (optionally masked) skills with d <= d_eval."""
    d, _ = _arrays(records)
    hit = d <= d_eval
    if mask is not None:
        hit = hit[np.asarray(mask, dtype=bool)]
    return float(hit.mean())


def iqm(values) -> float:
    x = np.sort(np.asarray(values, dtype=np.float64))
    k = x.size // 4
    return float(x[k:x.size - k].mean())


def iqm_ci(values, n_boot: int = 2000, seed: int = 0, level: float = 0.95) -> tuple:
    """IQM with a percentile-bootstrap interval over replications."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two replications")
    rng = np.random.default_rng(seed)
    boots = np.array([iqm(x[rng.integers(x.size, size=x.size)]) for _ in range(n_boot)])
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(boots, [tail, 100.0 - tail])
    return iqm(x), float(lo), float(hi)


# -- CSV exports -------------------------------------------------------------------


def _f(v) -> str:
    return "" if isinstance(v, float) and math.isnan(v) else f"{v:.17g}"


def write_records_csv(path, records) -> None:
    dim = len(records[0].z)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"z{i}" for i in range(dim)] + ["d", "R", "R_std", "n_rollouts"])
        for r in records:
            w.writerow([_f(v) for v in r.z] + [_f(r.d), _f(r.R), _f(r.R_std), r.n_rollouts])


def write_curve_csv(path, xname, xs, ys) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([xname, "fraction"])
        for x, y in zip(xs, ys):
            w.writerow([_f(float(x)), _f(float(y))])


def write_heatmap_csv(path, records, d_eval: float) -> None:
    """Rows (z1, z2, -d, R); R is left empty for skills with d >= d_eval."""
    if len(records[0].z) != 2:
        raise ValueError("heatmaps need a 2-D skill space")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z1", "z2", "neg_d", "R"])
        for r in records:
            w.writerow([_f(r.z[0]), _f(r.z[1]), _f(-r.d), _f(r.R) if r.d < d_eval else ""])
