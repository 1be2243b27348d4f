"""Hot inner loops with a numba backend and a pure-NumPy fallback.

The backend is fixed at import time.  Set ``QDAC_DISABLE_NUMBA=1`` (or run
without numba installed) to use the vectorised NumPy versions; both produce
identical results on identical inputs, so the switch only changes speed.
"""

import os

from . import _numpy as numpy_backend

numba_backend = None
if os.environ.get("QDAC_DISABLE_NUMBA", "0") not in ("1", "true", "yes"):
    try:
        from . import _numba as numba_backend
    except ImportError:  # pragma: no cover - numba is a declared dependency
        numba_backend = None

_active = numba_backend if numba_backend is not None else numpy_backend
BACKEND = "numba" if numba_backend is not None else "numpy"

point_step = _active.point_step
hopper_step = _active.hopper_step
power_iteration = _active.power_iteration
discounted_rollouts = _active.discounted_rollouts
chain_batch_means = _active.chain_batch_means

__all__ = [
    "BACKEND",
    "numpy_backend",
    "numba_backend",
    "point_step",
    "hopper_step",
    "power_iteration",
    "discounted_rollouts",
    "chain_batch_means",
]
