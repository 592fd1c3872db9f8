import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avatarforge import diffmath as dm
from avatarforge.diffmath import Tensor
from avatarforge.errors import DimensionError, FormatError, ParameterError

from helpers import central_diff, rel_err


# ---------------------------------------------------------------- tensors

def test_backward_sum_is_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    loss = dm.tsum(x)
    (g,) = dm.grad_arrays(loss, [x])
    assert np.array_equal(g, np.ones((3, 4)))


def test_backward_dot_is_2x():
    x = Tensor(np.random.default_rng(1).normal(size=7), requires_grad=True)
    loss = dm.tsum(dm.mul(x, x))
    (g,) = dm.grad_arrays(loss, [x])
    np.testing.assert_allclose(g, 2.0 * x.data, rtol=0, atol=0)


def test_backward_rejects_nonscalar_loss():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(DimensionError):
        dm.gradients(dm.mul(x, x), [x])


def test_unreachable_gradient_is_zero():
    x = Tensor(np.ones(3), requires_grad=True)
    y = Tensor(np.ones(3), requires_grad=True)
    loss = dm.tsum(dm.mul(x, x))
    gx, gy = dm.grad_arrays(loss, [x, y])
    assert np.array_equal(gy, np.zeros(3))
    assert np.array_equal(gx, 2.0 * np.ones(3))


def test_record_topological_order():
    x = Tensor(np.ones(3), requires_grad=True)
    y = dm.mul(dm.sin(x), dm.cos(x))
    order = dm.toposort(dm.tsum(y))
    pos = {id(n): i for i, n in enumerate(order)}
    for node in order:
        for p in node.parents:
            if id(p) in pos:
                assert pos[id(p)] < pos[id(node)]


def _composed_program(rng):
    """A random small composition exercising most ops."""
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3, 5))
    c = rng.normal(size=(4, 5))

    def build(arrays):
        ta, tb, tc = [Tensor(x, requires_grad=True) for x in arrays]
        z = dm.matmul(ta, tb)
        z = dm.add(z, tc)
        z = dm.softplus(z)
        z = dm.mul(z, dm.sigmoid(tc))
        z = dm.sub(z, dm.tabs(tc) * 0.1)
        w = dm.concat([z, dm.sin(z)], axis=1)
        w = dm.cumsum(w, axis=0)
        out = dm.tmean(dm.sqrt(dm.mul(w, w) + 1.0))
        return out, [ta, tb, tc]

    return [a, b, c], build


@pytest.mark.parametrize("seed", range(12))
def test_composed_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    arrays, build = _composed_program(rng)

    loss, leaves = build(arrays)
    got = dm.grad_arrays(loss, leaves)

    def f(arrs):
        out, _ = build(arrs)
        return out.item()

    want = central_diff(f, arrays, h=1e-5)
    for g, w in zip(got, want):
        assert rel_err(g, w) < 1e-5


def test_double_backward_through_input_gradient():
    # g = d/dx sum(sin(x)) = cos(x); L = sum(g^2); dL/dx = -2 cos(x) sin(x)
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=6), requires_grad=True)
    y = dm.tsum(dm.sin(x))
    (g,) = dm.gradients(y, [x])
    loss = dm.tsum(dm.mul(g, g))
    (ggot,) = dm.grad_arrays(loss, [x])
    want = -2.0 * np.cos(x.data) * np.sin(x.data)
    assert rel_err(ggot, want) < 1e-10


def test_double_backward_through_mlp_input_gradient():
    # Differentiating a loss built on d(net)/d(input) must reach the weights.
    net = dm.Mlp([2, 5, 1], hidden_activation="softplus", seed=11)
    x = Tensor(np.random.default_rng(4).normal(size=(3, 2)), requires_grad=True)
    y = dm.tsum(net.forward(x))
    (gx,) = dm.gradients(y, [x])
    loss = dm.tsum(dm.mul(gx, gx))
    params = net.parameters()
    got = dm.grad_arrays(loss, params)

    arrays = [p.data.copy() for p in params]

    def f(arrs):
        for p, a in zip(params, arrays):
            p.data = a
        for p, a in zip(params, arrs):
            p.data = a
        xx = Tensor(x.data, requires_grad=True)
        yy = dm.tsum(net.forward(xx))
        (gg,) = dm.gradients(yy, [xx])
        return float(np.sum(gg.data * gg.data))

    want = central_diff(f, [a.copy() for a in arrays], h=1e-5)
    for p, a in zip(params, arrays):
        p.data = a
    for g, w in zip(got, want):
        assert rel_err(g, w) < 1e-4


def test_no_grad_suppresses_record():
    x = Tensor(np.ones(3), requires_grad=True)
    with dm.no_grad():
        y = dm.mul(x, x)
    assert y.vjp is None and y.parents == ()


def test_scatter_and_gather_rows():
    base = Tensor(np.zeros((5, 3)))
    vals = Tensor(np.arange(6, dtype=float).reshape(2, 3), requires_grad=True)
    out = dm.scatter_rows(base, np.array([1, 3]), vals)
    assert np.array_equal(out.data[1], [0, 1, 2])
    loss = dm.tsum(dm.mul(out, out))
    (g,) = dm.grad_arrays(loss, [vals])
    np.testing.assert_allclose(g, 2.0 * vals.data)


# ---------------------------------------------------------------- mlp

def test_mlp_identity_layer():
    net = dm.Mlp([3, 3], seed=0)
    net.weights[0].data = np.eye(3)
    net.biases[0].data = np.zeros(3)
    x = np.random.default_rng(0).normal(size=(4, 3))
    out = net.forward(Tensor(x))
    np.testing.assert_array_equal(out.data, x)


def test_mlp_zero_weights_gives_bias():
    net = dm.Mlp([3, 2], seed=0)
    net.weights[0].data = np.zeros((3, 2))
    net.biases[0].data = np.array([0.5, -1.5])
    out = net.forward(Tensor(np.random.default_rng(1).normal(size=(6, 3))))
    np.testing.assert_array_equal(out.data, np.tile([0.5, -1.5], (6, 1)))


def test_mlp_matches_straight_line_oracle():
    # Independent forward pass: plain loops, no shared code with the network.
    net = dm.Mlp([4, 8, 8, 2], hidden_activation="relu", seed=5)
    x = np.random.default_rng(6).normal(size=(5, 4))
    out = net.forward(Tensor(x)).data

    h = x.copy()
    for i in range(3):
        h = h @ net.weights[i].data + net.biases[i].data
        if i < 2:
            h = np.where(h > 0, h, 0.0)
    assert np.max(np.abs(out - h)) < 1e-12


def test_mlp_forward_deterministic_and_seeded():
    a = dm.Mlp([3, 7, 1], seed=42)
    b = dm.Mlp([3, 7, 1], seed=42)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa.data, pb.data)
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(a.forward(Tensor(x)).data, b.forward(Tensor(x)).data)


def test_mlp_shape_error_names_layer():
    net = dm.Mlp([3, 2], seed=0)
    with pytest.raises(DimensionError, match="layer 0"):
        net.forward(Tensor(np.zeros((2, 5))))


def test_mlp_gradient_matches_finite_differences():
    net = dm.Mlp([3, 6, 2], hidden_activation="softplus", seed=7)
    x = np.random.default_rng(8).normal(size=(4, 3))
    params = net.parameters()
    loss = dm.tmean(net.forward(Tensor(x)))
    got = dm.grad_arrays(loss, params)

    arrays = [p.data.copy() for p in params]

    def f(arrs):
        for p, a in zip(params, arrs):
            p.data = a
        return dm.tmean(net.forward(Tensor(x))).item()

    want = central_diff(f, [a.copy() for a in arrays], h=1e-5)
    for p, a in zip(params, arrays):
        p.data = a
    for g, w in zip(got, want):
        assert rel_err(g, w) < 1e-5


# ---------------------------------------------------------------- adam

def test_adam_zero_gradient_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = dm.AdamState([p], lr=0.1)
    dm.adam_step(state, [p], [np.zeros(2)])
    assert np.array_equal(p.data, [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step_closed_form():
    g = np.array([0.3, -0.7, 1e-3])
    p = Tensor(np.zeros(3), requires_grad=True)
    state = dm.AdamState([p], lr=0.01)
    dm.adam_step(state, [p], [g])
    want = -0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.data, want, rtol=0, atol=1e-15)


def test_adam_two_steps_match_scalar_reference():
    # Hand-rolled scalar Adam, written out step by step.
    g = 0.5
    lr, b1, b2, eps = 0.02, 0.9, 0.999, 1e-8
    theta, m, v = 1.0, 0.0, 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        theta -= lr * mh / (np.sqrt(vh) + eps)

    p = Tensor(np.array([1.0]), requires_grad=True)
    state = dm.AdamState([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
    dm.adam_step(state, [p], [np.array([g])])
    dm.adam_step(state, [p], [np.array([g])])
    assert abs(p.data[0] - theta) < 1e-12
    assert state.t == 2


def test_adam_lr_zero_is_identity():
    p = Tensor(np.array([3.0]), requires_grad=True)
    state = dm.AdamState([p], lr=0.0)
    dm.adam_step(state, [p], [np.array([7.0])])
    assert p.data[0] == 3.0


def test_adam_shape_mismatch():
    p = Tensor(np.zeros(3), requires_grad=True)
    state = dm.AdamState([p])
    with pytest.raises(DimensionError):
        dm.adam_step(state, [p], [np.zeros(4)])


# ------------------------------------------------------- positional encode

def test_positional_encode_origin():
    out = dm.positional_encode(Tensor(np.zeros((2, 3))), bands=3).data
    assert out.shape == (2, 3 + 6 * 3)
    assert np.array_equal(out[:, :3], np.zeros((2, 3)))
    for k in range(3):
        sin_block = out[:, 3 + 6 * k: 6 + 6 * k]
        cos_block = out[:, 6 + 6 * k: 9 + 6 * k]
        assert np.array_equal(sin_block, np.zeros((2, 3)))
        assert np.array_equal(cos_block, np.ones((2, 3)))


def test_positional_encode_zero_bands_is_identity():
    x = np.random.default_rng(0).normal(size=(4, 3))
    out = dm.positional_encode(Tensor(x), bands=0).data
    assert np.array_equal(out, x)


def test_positional_encode_halfpoint():
    out = dm.positional_encode(Tensor(np.array([[0.5, 0.0, 0.0]])), bands=1).data
    assert out.shape == (1, 9)
    assert abs(out[0, 3] - 1.0) < 1e-15  # sin(pi * 0.5) in the x slot


def test_positional_encode_rejects_negative_bands():
    with pytest.raises(ParameterError):
        dm.positional_encode(Tensor(np.zeros((1, 3))), bands=-1)


def test_positional_encode_raw_matches_recorded():
    x = np.random.default_rng(2).normal(size=(5, 3))
    a = dm.positional_encode(Tensor(x), bands=4).data
    b = dm.positional_encode_raw(x, bands=4)
    assert np.array_equal(a, b)


# ------------------------------------------------------------- logistic

def test_logistic_cdf_midpoint():
    for s in (0.3, 1.0, 64.0):
        assert dm.logistic_cdf(0.0, s) == 0.5


def test_logistic_density_peak():
    for s in (0.5, 2.0, 100.0):
        assert abs(dm.logistic_density(0.0, s) - s / 4.0) < 1e-14


def test_logistic_density_integrates_to_one():
    # Trapezoid-rule oracle over [-20/s, 20/s].
    for s in (0.7, 5.0, 50.0):
        x = np.linspace(-20.0 / s, 20.0 / s, 20001)
        total = np.trapezoid(dm.logistic_density(x, s), x)
        assert abs(total - 1.0) < 1e-6


def test_logistic_rejects_bad_sharpness():
    with pytest.raises(ParameterError):
        dm.logistic_cdf(0.0, 0.0)
    with pytest.raises(ParameterError):
        dm.logistic_density(0.0, -1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(-30, 30), st.floats(-30, 30),
       st.floats(0.05, 90.0))
def test_logistic_cdf_monotone(x1, x2, s):
    # Strictness is only observable when s * (x2 - x1) clears float64
    # resolution; below that the two CDF values round to the same double.
    if abs(x1 - x2) * s < 1e-9 or max(abs(x1), abs(x2)) * s > 30.0:
        return
    lo, hi = min(x1, x2), max(x1, x2)
    assert dm.logistic_cdf(lo, s) < dm.logistic_cdf(hi, s)


# ------------------------------------------------------------- container

def test_container_round_trip(tmp_path):
    arrays = {
        "w": np.random.default_rng(0).normal(size=(3, 4)),
        "b": np.random.default_rng(1).normal(size=7),
    }
    path = tmp_path / "ck.avf"
    dm.save_container(path, dm.FIELD_MAGIC, {"step": 12}, arrays)
    header, loaded = dm.load_container(path, dm.FIELD_MAGIC)
    assert header["step"] == 12
    for k in arrays:
        assert np.array_equal(arrays[k], loaded[k])


def test_container_rejects_wrong_magic(tmp_path):
    path = tmp_path / "ck.avf"
    dm.save_container(path, dm.FIELD_MAGIC, {}, {"x": np.zeros(2)})
    with pytest.raises(FormatError):
        dm.load_container(path, dm.BODY_MAGIC)


def test_container_rejects_truncation(tmp_path):
    path = tmp_path / "ck.avf"
    dm.save_container(path, dm.FIELD_MAGIC, {}, {"x": np.zeros(64)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-16])
    with pytest.raises(FormatError):
        dm.load_container(path, dm.FIELD_MAGIC)
