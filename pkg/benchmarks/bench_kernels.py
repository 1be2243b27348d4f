"""Time every kernel under the numba and NumPy backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

The first numba call (compilation) is excluded; each row is the best of
``--repeat`` runs.
"""

import argparse
import json
import time

import numpy as np

from qdac.kernels import _numba as nb
from qdac.kernels import _numpy as npb


def _cdf(rng, *shape):
    p = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])
    return np.cumsum(p, axis=-1)


def cases(rng):
    S, A, d = 10, 4, 3
    p_cdf, pi_cdf = _cdf(rng, S, A, S), _cdf(rng, S, A)
    phi = rng.uniform(0, 1, (S, A, d))
    m = rng.dirichlet(np.ones(S), size=S)
    point = np.zeros((4410, 4))
    hop = np.zeros((4410, 5))
    act = rng.uniform(-1, 1, (4410, 2))
    inf = np.inf
    u_roll = rng.uniform(size=(2000, 300, 2))
    u_chain = rng.uniform(size=(100_000, 2))
    return {
        # one batched evaluation step over a 21x21 grid with 10 rollouts
        "point_step[4410]": lambda k: k.point_step(point, act, 0.05, 2.0, 1.0, 0.5, 0.1,
                                                   inf, -inf, inf),
        "point_step[1]": lambda k: k.point_step(point[:1], act[:1], 0.05, 2.0, 1.0, 0.5, 0.1,
                                                inf, -inf, inf),
        "hopper_step[4410]": lambda k: k.hopper_step(hop, act, 0.02, 9.8, 2.0, 2.0, 1.0, 0.1),
        "power_iteration[10]": lambda k: k.power_iteration(m, np.full(S, 1.0 / S), 1e-14,
                                                           1_000_000),
        "discounted_rollouts[2000x300]": lambda k: k.discounted_rollouts(
            p_cdf, pi_cdf, phi, 0.9, np.zeros(2000, np.int64), np.full(2000, -1, np.int64),
            u_roll),
        "chain_batch_means[1e5]": lambda k: k.chain_batch_means(
            p_cdf, pi_cdf, phi, 0, u_chain, 1000),
    }


def best_time(fn, repeat):
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return min(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, call in cases(rng).items():
        call(nb)  # compile
        t_np = best_time(lambda: call(npb), args.repeat)
        t_nb = best_time(lambda: call(nb), args.repeat)
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb})
        print(f"{name:32s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
