import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdac.approx import (
    AdamState,
    MlpParams,
    MlpSpec,
    NonFiniteError,
    adam_step,
    load_params,
    mlp_backward,
    mlp_forward,
    mlp_init,
    save_params,
    soft_update,
)


def central_diff(f, x, h=1e-5):
    # independent oracle, deliberately not approx.numerical_gradient
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_param_count_small():
    assert mlp_init(MlpSpec((2, 3, 1)), 0).flat.size == 13


def test_param_count_wide_layers():
    assert MlpSpec((4, 512, 512, 2)).n_params == 266_242


def test_init_deterministic():
    spec = MlpSpec((3, 5, 2))
    assert np.array_equal(mlp_init(spec, 4).flat, mlp_init(spec, 4).flat)


def test_init_biases_zero_and_bounded():
    spec = MlpSpec((9, 4, 2))
    p = mlp_init(spec, 1)
    (w0, b0), (w1, b1) = p.layers
    assert np.all(b0 == 0) and np.all(b1 == 0)
    assert np.max(np.abs(w0)) <= 1 / 3 and np.max(np.abs(w1)) <= 1 / 2


@pytest.mark.parametrize("sizes", [(1,), (), (2, 0, 1)])
def test_invalid_spec(sizes):
    with pytest.raises(ValueError):
        MlpSpec(sizes)


def test_zero_params_zero_output():
    spec = MlpSpec((3, 4, 2))
    p = MlpParams(spec, np.zeros(spec.n_params))
    assert np.array_equal(mlp_forward(p, [1.0, -2.0, 3.0]), [0.0, 0.0])


def test_affine_single_layer():
    p = MlpParams(MlpSpec((1, 1)), np.array([2.0, 1.0]))
    assert mlp_forward(p, [3.0])[0] == 7.0


def test_hand_computed_relu_net():
    spec = MlpSpec((2, 2, 1))
    # W1 = [[1, -1], [2, 1]] (n_in x n_out), b1 = [0.5, -3], W2 = [[1.5], [-2]], b2 = [0.25]
    flat = np.array([1, -1, 2, 1, 0.5, -3, 1.5, -2, 0.25], dtype=float)
    p = MlpParams(spec, flat)
    # x = (1, 2): pre = (1 + 4 + 0.5, -1 + 2 - 3) = (5.5, -2) -> relu (5.5, 0)
    assert mlp_forward(p, [1.0, 2.0])[0] == pytest.approx(5.5 * 1.5 + 0.25, abs=1e-15)


def test_dimension_mismatch():
    p = mlp_init(MlpSpec((3, 2)), 0)
    with pytest.raises(ValueError):
        mlp_forward(p, [1.0, 2.0])
    with pytest.raises(ValueError):
        mlp_backward(p, [1.0, 2.0, 3.0], [1.0])


def test_linear_layer_gradient_is_input():
    p = mlp_init(MlpSpec((3, 1)), 0)
    x = np.array([0.3, -1.2, 2.0])
    g, gx = mlp_backward(p, x, [1.0])
    assert np.array_equal(g[:3], x) and g[3] == 1.0
    assert np.allclose(gx, p.layers[0][0][:, 0])


def test_zero_upstream_zero_grad():
    p = mlp_init(MlpSpec((3, 6, 2)), 5)
    g, gx = mlp_backward(p, np.ones(3), np.zeros(2))
    assert not g.any() and not gx.any()


def test_batch_gradient_is_row_sum():
    p = mlp_init(MlpSpec((3, 6, 2), "tanh"), 2)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 3))
    up = rng.standard_normal((4, 2))
    g, gx = mlp_backward(p, x, up)
    rows = [mlp_backward(p, x[i], up[i]) for i in range(4)]
    assert np.allclose(g, sum(r[0] for r in rows))
    assert np.allclose(gx, np.stack([r[1] for r in rows]))


@settings(max_examples=100, deadline=None)
@given(
    sizes=st.lists(st.integers(1, 6), min_size=2, max_size=4),
    act=st.sampled_from(["relu", "tanh"]),
    out=st.sampled_from(["linear", "sigmoid"]),
    seed=st.integers(0, 2**31 - 1),
)
def test_gradients_match_finite_differences(sizes, act, out, seed):
    spec = MlpSpec(tuple(sizes), act, out)
    rng = np.random.default_rng(seed)
    p = mlp_init(spec, seed)
    p = p.with_flat(p.flat + 0.1 * rng.standard_normal(spec.n_params))
    x = rng.standard_normal(spec.n_in)
    up = rng.standard_normal(spec.n_out)
    g, gx = mlp_backward(p, x, up)
    fd = central_diff(lambda f: up @ mlp_forward(MlpParams(spec, f), x), p.flat)
    fdx = central_diff(lambda xx: up @ mlp_forward(p, xx), x)
    assert np.max(np.abs(g - fd)) / (1 + np.max(np.abs(g))) < 1e-4
    assert np.max(np.abs(gx - fdx)) / (1 + np.max(np.abs(gx))) < 1e-4


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(0.1, 5.0))
def test_sigmoid_output_in_open_unit_interval(seed, scale):
    p = mlp_init(MlpSpec((3, 8, 2), output_activation="sigmoid"), seed)
    x = np.random.default_rng(seed).standard_normal((16, 3)) * scale
    y = mlp_forward(p, x)
    assert np.all(y > 0) and np.all(y < 1)


def test_adam_first_step_magnitude_is_lr():
    p = MlpParams(MlpSpec((1, 1)), np.array([0.5, -0.5]))
    q, st_ = adam_step(p, np.array([3.0, -0.02]), AdamState.zeros(2), 0.01)
    assert np.allclose(q.flat - p.flat, [-0.01, 0.01], rtol=1e-5)
    assert st_.t == 1


def test_adam_zero_grad_no_change():
    p = mlp_init(MlpSpec((2, 3, 1)), 0)
    q, _ = adam_step(p, np.zeros(p.flat.size), AdamState.zeros(p.flat.size), 0.1)
    assert np.array_equal(q.flat, p.flat)


def scalar_adam(theta, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
        out.append(theta)
    return out


def test_adam_quadratic_descends():
    p = MlpParams(MlpSpec((1, 1)), np.array([1.0, 0.0]))
    s = AdamState.zeros(2)
    expected = scalar_adam(1.0, lambda th: 2 * th, 3, 0.1)
    prev = 1.0
    for want in expected:
        p, s = adam_step(p, 2 * p.flat * np.array([1.0, 0.0]), s, 0.1)
        assert 0 <= p.flat[0] < prev
        assert p.flat[0] == pytest.approx(want, rel=1e-12)
        prev = p.flat[0]


def test_adam_rejects_nonfinite_and_bad_args():
    p = mlp_init(MlpSpec((1, 1)), 0)
    s = AdamState.zeros(2)
    with pytest.raises(NonFiniteError):
        adam_step(p, np.array([np.nan, 0.0]), s, 0.1)
    with pytest.raises(ValueError):
        adam_step(p, np.zeros(3), s, 0.1)
    with pytest.raises(ValueError):
        adam_step(p, np.zeros(2), s, 0.0)


def test_soft_update_tau_one_and_formula():
    spec = MlpSpec((1, 1))
    t = MlpParams(spec, np.zeros(2))
    o = MlpParams(spec, np.ones(2))
    assert np.array_equal(soft_update(t, o, 1.0).flat, o.flat)
    assert np.allclose(soft_update(t, o, 0.005).flat, 0.005)


def test_soft_update_geometric_gap():
    spec = MlpSpec((2, 2))
    t = MlpParams(spec, np.zeros(spec.n_params))
    o = MlpParams(spec, np.full(spec.n_params, 2.0))
    for _ in range(50):
        t = soft_update(t, o, 0.1)
    assert np.allclose(o.flat - t.flat, 2.0 * 0.9**50, rtol=1e-12)


def test_soft_update_spec_mismatch():
    with pytest.raises(ValueError):
        soft_update(mlp_init(MlpSpec((1, 2)), 0), mlp_init(MlpSpec((2, 1)), 0), 0.5)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 40), seed=st.integers(0, 1000), tau=st.floats(1e-3, 1.0))
def test_lengths_preserved(n, seed, tau):
    spec = MlpSpec((n, 1))
    p = mlp_init(spec, seed)
    q, s = adam_step(p, np.ones(spec.n_params), AdamState.zeros(spec.n_params), 1e-3)
    assert q.flat.size == s.m.size == s.v.size == spec.n_params
    assert soft_update(p, q, tau).flat.size == spec.n_params
    assert np.all(s.v >= 0)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    p = mlp_init(MlpSpec((3, 7, 2), "tanh", "sigmoid"), 11)
    p = p.with_flat(p.flat * np.pi)
    save_params(tmp_path / "a.params", p, "lagrange")
    q, role = load_params(tmp_path / "a.params")
    assert role == "lagrange" and q.spec == p.spec
    assert q.flat.tobytes() == p.flat.tobytes()


def test_checkpoint_header_is_json(tmp_path):
    p = mlp_init(MlpSpec((2, 1)), 0)
    save_params(tmp_path / "b.params", p, "q1")
    head = (tmp_path / "b.params").read_bytes().split(b"\n", 1)[0]
    assert b'"length": 3' in head and b'"role": "q1"' in head
