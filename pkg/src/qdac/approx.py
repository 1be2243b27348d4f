"""Small dense MLPs with hand-written reverse mode and an Adam optimiser.

Every learned function of the agent (actor, critics, successor features,
Lagrange multiplier) is an :class:`MlpParams`: one flat float64 vector plus
the :class:`MlpSpec` describing how it is cut into layers.  All operations
accept either a single input vector or a batch of row vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("linear", "sigmoid")


class NonFiniteError(FloatingPointError):
    """Raised when a gradient or parameter vector contains NaN or inf."""


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @cached_property
    def offsets(self) -> tuple[tuple[int, int, int], ...]:
        """(weight_start, bias_start, end) for each layer in the flat vector."""
        out = []
        pos = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w0 = pos
            b0 = w0 + n_in * n_out
            pos = b0 + n_out
            out.append((w0, b0, pos))
        return tuple(out)

    @property
    def n_params(self) -> int:
        return self.offsets[-1][2]

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["layer_sizes"]), d["hidden_activation"], d["output_activation"])


@dataclass(frozen=True, eq=False)
class MlpParams:
    spec: MlpSpec
    flat: np.ndarray
    layers: list = field(init=False, repr=False)

    def __post_init__(self):
        flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if flat.ndim != 1 or flat.shape[0] != self.spec.n_params:
            raise ValueError(
                f"flat vector has shape {flat.shape}, spec needs ({self.spec.n_params},)"
            )
        object.__setattr__(self, "flat", flat)
        views = []
        sizes = self.spec.layer_sizes
        for (w0, b0, end), n_in, n_out in zip(self.spec.offsets, sizes[:-1], sizes[1:]):
            views.append((flat[w0:b0].reshape(n_in, n_out), flat[b0:end]))
        object.__setattr__(self, "layers", views)

    def with_flat(self, flat: np.ndarray) -> "MlpParams":
        return MlpParams(self.spec, flat)

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, self.flat.copy())


def mlp_init(spec: MlpSpec, seed: int) -> MlpParams:
    """Fan-in scaled uniform weights (bound 1/sqrt(fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(spec.n_params)
    for (w0, b0, _), n_in in zip(spec.offsets, spec.layer_sizes[:-1]):
        bound = 1.0 / np.sqrt(n_in)
        flat[w0:b0] = rng.uniform(-bound, bound, size=b0 - w0)
    return MlpParams(spec, flat)


def _as_batch(params: MlpParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.spec.n_in:
        raise ValueError(f"input shape {x.shape} does not match n_in={params.spec.n_in}")
    return x, single


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mlp_forward_cached(params: MlpParams, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass that also returns the post-activation of every layer.

    ``cache[0]`` is the (batched) input and ``cache[-1]`` the output, which is
    what :func:`mlp_backward` needs to avoid recomputing the pass.
    """
    h, _ = _as_batch(params, x)
    spec = params.spec
    cache = [h]
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = h @ w
        h += b
        if i < last:
            if spec.hidden_activation == "relu":
                np.maximum(h, 0.0, out=h)
            else:
                np.tanh(h, out=h)
        elif spec.output_activation == "sigmoid":
            h = _sigmoid(h)
        cache.append(h)
    return h, cache


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    out, _ = mlp_forward_cached(params, x)
    if np.asarray(x).ndim == 1:
        return out[0]
    return out


def mlp_backward(params: MlpParams, x, upstream_grad, cache=None, input_grad=True):
    """Gradients of <upstream_grad, mlp_forward(params, x)>.

    For a batch the parameter gradient is the sum over rows; callers that want
    a mean fold the 1/N into ``upstream_grad``.  Returns ``(param_grad,
    input_grad)`` with ``input_grad`` shaped like ``x`` (``None`` when
    ``input_grad=False``).
    """
    xb, single = _as_batch(params, x)
    g = np.asarray(upstream_grad, dtype=np.float64)
    if single:
        g = g[None, :]
    if g.shape != (xb.shape[0], params.spec.n_out):
        raise ValueError(f"upstream shape {g.shape} does not match output shape")
    if cache is None:
        _, cache = mlp_forward_cached(params, xb)
    spec = params.spec
    grad = np.empty(spec.n_params)
    last = len(params.layers) - 1
    for i in range(last, -1, -1):
        w, _ = params.layers[i]
        out = cache[i + 1]
        if i == last:
            if spec.output_activation == "sigmoid":
                g = g * out * (1.0 - out)
        elif spec.hidden_activation == "relu":
            g = g * (out > 0.0)
        else:
            g = g * (1.0 - out * out)
        w0, b0, end = spec.offsets[i]
        np.matmul(cache[i].T, g, out=grad[w0:b0].reshape(w.shape))
        np.sum(g, axis=0, out=grad[b0:end])
        if i == 0 and not input_grad:
            return grad, None
        g = g @ w.T
    if single:
        g = g[0]
    return grad, g


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, **kw)


def adam_step(params: MlpParams, grad, state: AdamState, lr: float):
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.flat.shape:
        raise ValueError(f"gradient shape {grad.shape} != params {params.flat.shape}")
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient passed to adam_step")
    flat, new_state = adam_update(params.flat, grad, state, lr)
    return params.with_flat(flat), new_state


def adam_update(x: np.ndarray, grad: np.ndarray, state: AdamState, lr: float):
    """Adam on a raw vector (also used for the scalar log-temperature)."""
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    x_new = x - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return x_new, AdamState(m, v, t, b1, b2, state.eps)


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    if target.spec != online.spec:
        raise ValueError("soft_update requires identical specs")
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    if tau == 1.0:
        return online.copy()
    return target.with_flat(tau * online.flat + (1.0 - tau) * target.flat)


def numerical_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar function ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        fp = f(x)
        x[i] = orig - h
        fm = f(x)
        x[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out


# -- checkpoint format ------------------------------------------------------
# One JSON manifest line, newline, then the flat vector as little-endian f8.


def save_params(path, params: MlpParams, role: str) -> None:
    manifest = {"spec": params.spec.to_dict(), "length": int(params.flat.size), "role": role}
    with open(path, "wb") as f:
        f.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        f.write(params.flat.astype("<f8").tobytes())


def load_params(path) -> tuple[MlpParams, str]:
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    manifest = json.loads(data[:nl])
    flat = np.frombuffer(data[nl + 1 :], dtype="<f8").astype(np.float64)
    if flat.size != manifest["length"]:
        raise ValueError(f"{path}: expected {manifest['length']} floats, found {flat.size}")
    return MlpParams(MlpSpec.from_dict(manifest["spec"]), flat), manifest["role"]
