import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dalmp import autodiff as ad


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar f at every entry of x (independent oracle)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        up = f(x)
        x[i] = orig - h
        down = f(x)
        x[i] = orig
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


# --- forward values ------------------------------------------------------------


def test_relu_forward():
    assert ad.relu(ad.leaf([-1.0, 0.0, 2.0])).value.tolist() == [0.0, 0.0, 2.0]


def test_identity_kernel_conv_is_identity(rng):
    x = rng.normal(size=(24, 1))
    w = np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1)
    out = ad.conv1d(ad.leaf(x), ad.leaf(w), ad.leaf([0.0])).value
    assert np.array_equal(out, x)


@given(length=st.integers(3, 30), width=st.sampled_from([1, 3]), channels=st.integers(1, 4))
def test_identity_conv_any_length(length, width, channels):
    x = np.random.default_rng(length).normal(size=(2, length, channels))
    w = np.zeros((width, channels, channels))
    w[(width - 1) // 2] = np.eye(channels)
    out = ad.conv1d(ad.leaf(x), ad.leaf(w), ad.leaf(np.zeros(channels))).value
    assert np.array_equal(out, x)


def test_conv1d_matches_loop_oracle(rng):
    x = rng.normal(size=(2, 7, 3))
    w = rng.normal(size=(3, 3, 2))
    b = rng.normal(size=2)
    out = ad.conv1d(ad.leaf(x), ad.leaf(w), ad.leaf(b)).value
    expected = np.zeros((2, 7, 2))
    for n in range(2):
        for t in range(7):
            for j in range(3):
                src = t + j - 1
                if 0 <= src < 7:
                    expected[n, t] += x[n, src] @ w[j]
            expected[n, t] += b
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)


def test_concat_shape():
    a = ad.leaf(np.zeros((2, 24, 1)))
    b = ad.leaf(np.ones((2, 24, 3)))
    assert ad.concat(a, b).shape == (2, 24, 4)


@given(arrays(np.float64, (2, 5, 3), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, (2, 5, 2), elements=st.floats(-1e3, 1e3)))
def test_concat_then_slice_roundtrip(a, b):
    joined = ad.concat(ad.leaf(a), ad.leaf(b))
    assert np.array_equal(ad.slice_(joined, 0, 3).value, a)
    assert np.array_equal(ad.slice_(joined, 3, 5).value, b)


def test_lstm_matches_scalar_loop_oracle(rng):
    batch, steps, feats, units = 2, 5, 2, 3
    x = rng.normal(size=(batch, steps, feats))
    w_x = rng.normal(size=(feats, 4 * units))
    w_h = rng.normal(size=(units, 4 * units))
    b = rng.normal(size=4 * units)
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    h = np.zeros((batch, units))
    c = np.zeros((batch, units))
    for t in range(steps):
        a = x[:, t] @ w_x + h @ w_h + b
        i, f, o, g = (a[:, k * units:(k + 1) * units] for k in range(4))
        c = sig(f) * c + sig(i) * np.tanh(g)
        h = sig(o) * np.tanh(c)
    out = ad.lstm(ad.leaf(x), ad.leaf(w_x), ad.leaf(w_h), ad.leaf(b)).value
    np.testing.assert_allclose(out, h, rtol=1e-12, atol=1e-14)


def test_forward_is_deterministic(rng):
    x = rng.normal(size=(3, 8, 1))
    params = [rng.normal(size=s) for s in [(1, 8), (2, 8), (8,)]]
    first = ad.lstm(ad.leaf(x), *map(ad.leaf, params)).value
    second = ad.lstm(ad.leaf(x), *map(ad.leaf, params)).value
    assert np.array_equal(first, second)


# --- errors ----------------------------------------------------------------------


def test_matmul_shape_error_names_primitive_and_shapes():
    with pytest.raises(ad.ShapeMismatchError) as info:
        ad.matmul(ad.leaf(np.zeros((2, 3))), ad.leaf(np.zeros((4, 5))))
    message = str(info.value)
    assert "matmul" in message and "(2, 3)" in message and "(4, 5)" in message


def test_concat_shape_error():
    with pytest.raises(ad.ShapeMismatchError):
        ad.concat(ad.leaf(np.zeros((2, 24, 1))), ad.leaf(np.zeros((2, 23, 1))))


def test_conv_kernel_longer_than_input():
    with pytest.raises(ad.ShapeMismatchError):
        ad.conv1d(ad.leaf(np.zeros((1, 2, 1))), ad.leaf(np.zeros((3, 1, 1))), ad.leaf([0.0]))


def test_unknown_primitive():
    with pytest.raises(ad.UnknownPrimitiveError):
        ad.forward_primitive("softmax", [ad.leaf([1.0])])


def test_rank_cap():
    with pytest.raises(ValueError):
        ad.leaf(np.zeros((1, 1, 1, 1)))


def test_non_scalar_loss():
    with pytest.raises(ad.NonScalarLossError):
        ad.backward(ad.relu(ad.leaf([1.0, 2.0])))


# --- backward ----------------------------------------------------------------------


def test_relu_subgradient():
    x = ad.leaf([-1.0, 2.0])
    ad.backward(ad.sum_all(ad.relu(x)))
    assert x.grad.tolist() == [0.0, 1.0]


def test_relu_subgradient_at_zero_is_zero():
    x = ad.leaf([0.0])
    ad.backward(ad.sum_all(ad.relu(x)))
    assert x.grad.tolist() == [0.0]


def test_mae_at_perfect_fit_has_zero_gradients(rng):
    w = ad.leaf(rng.normal(size=(3, 2)))
    x = ad.leaf(rng.normal(size=(4, 3)))
    pred = ad.matmul(x, w)
    loss = ad.mae(pred, ad.leaf(pred.value.copy()))
    ad.backward(loss)
    assert loss.value[0] == 0.0
    assert np.all(w.grad == 0.0) and np.all(x.grad == 0.0)


def test_backward_accumulates():
    x = ad.leaf([1.5, -2.0])
    loss = ad.sum_all(ad.mul(x, x))
    ad.backward(loss)
    once = x.grad.copy()
    ad.backward(loss)
    assert np.array_equal(x.grad, 2 * once)


def test_unreachable_nodes_keep_zero_gradient():
    used = ad.leaf([1.0])
    unused = ad.leaf([3.0])
    ad.tanh(unused)
    ad.backward(ad.sum_all(ad.sigmoid(used)))
    assert unused.grad.tolist() == [0.0]


def test_shared_subexpression_gradient():
    # loss = sum((x*x) + (x*x)) = 2 x^2 -> grad 4x
    x = ad.leaf([0.5, -1.0, 3.0])
    sq = ad.mul(x, x)
    ad.backward(ad.sum_all(ad.add(sq, sq)))
    np.testing.assert_array_equal(x.grad, 4 * x.value)


def test_linear_model_hand_gradient():
    def builder(p):
        y = ad.mul(p["w"], ad.leaf([2.0]))
        r = ad.sub(y, ad.leaf([1.0]))
        return ad.sum_all(ad.mul(r, r))

    w = ad.leaf([3.0], name="w")
    ad.backward(builder({"w": w}))
    assert w.grad[0] == 20.0
    report = ad.grad_check(builder, {"w": np.array([3.0])}, tolerance=1e-6)
    assert report.passed


def test_sigmoid_chain_depth_10(rng):
    # sigmoid(4h - 2) keeps every link's slope near 1, so the gradient at the
    # input does not vanish below finite-difference resolution
    def builder(p):
        h = p["x"]
        for _ in range(10):
            h = ad.sigmoid(ad.add(ad.mul(h, p["a"]), p["c"]))
        return ad.sum_all(h)

    params = {"x": rng.normal(0.5, 0.2, size=4), "a": rng.normal(4.0, 0.3, size=4),
              "c": rng.normal(-2.0, 0.1, size=4)}
    report = ad.grad_check(builder, params)
    assert report.passed, report.max_rel_error


def test_two_layer_net_every_weight(rng):
    x = ad.leaf(rng.normal(size=(5, 4)))
    t = ad.leaf(rng.normal(size=(5, 2)))

    def builder(p):
        h = ad.tanh(ad.dense(x, p["w1"], p["b1"]))
        return ad.mae(ad.dense(h, p["w2"], p["b2"]), t)

    params = {"w1": rng.normal(size=(4, 6)), "b1": rng.normal(size=6),
              "w2": rng.normal(size=(6, 2)), "b2": rng.normal(size=2)}
    report = ad.grad_check(builder, params)
    assert report.passed, report.max_rel_error
    assert report.checked == {"w1": 24, "b1": 6, "w2": 12, "b2": 2}


PRIMITIVE_CASES = {
    "matmul": (lambda a, b: ad.matmul(a, b), [(2, 3, 4), (4, 2)]),
    "add": (lambda a, b: ad.add(a, b), [(2, 3, 4), (4,)]),
    "sub": (lambda a, b: ad.sub(a, b), [(3, 4), (3, 4)]),
    "mul": (lambda a, b: ad.mul(a, b), [(2, 3), (3,)]),
    "sigmoid": (lambda a: ad.sigmoid(a), [(2, 5)]),
    "tanh": (lambda a: ad.tanh(a), [(2, 5)]),
    "concat": (lambda a, b: ad.concat(a, b), [(2, 3, 1), (2, 3, 2)]),
    "slice": (lambda a: ad.slice_(a, 1, 3, axis=1), [(2, 4, 2)]),
    "reshape": (lambda a: ad.reshape(a, (3, 4)), [(2, 6)]),
    "conv1d": (lambda a, w, b: ad.conv1d(a, w, b), [(2, 6, 3), (3, 3, 2), (2,)]),
    "lstm": (lambda a, wx, wh, b: ad.lstm(a, wx, wh, b), [(2, 5, 2), (2, 12), (3, 12), (12,)]),
}


@pytest.mark.parametrize("kind", sorted(PRIMITIVE_CASES))
def test_primitive_gradient_matches_independent_fd(kind):
    """Compare against an FD oracle written here, not ``grad_check``."""
    fn, shapes = PRIMITIVE_CASES[kind]
    rng = np.random.default_rng(sum(map(ord, kind)))
    values = [rng.normal(size=s) for s in shapes]
    weights = rng.normal(size=fn(*map(ad.leaf, values)).shape)

    def loss_of(vals):
        return float((fn(*map(ad.leaf, vals)).value * weights).sum())

    leaves = [ad.leaf(v) for v in values]
    out = fn(*leaves)
    ad.backward(ad.sum_all(ad.mul(out, ad.leaf(weights))))
    for i, v in enumerate(values):
        def f(arr, i=i):
            vals = list(values)
            vals[i] = arr
            return loss_of(vals)
        assert rel_err(leaves[i].grad, numeric_grad(f, v.copy())) < 1e-6, (kind, i)


def test_relu_and_mae_gradients_away_from_kinks(rng):
    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 0.05] = 0.5
    target = x + rng.choice([-1.0, 1.0], size=x.shape) * rng.uniform(0.1, 1.0, size=x.shape)
    leaf = ad.leaf(x)
    ad.backward(ad.mae(ad.relu(leaf), ad.leaf(target)))
    f = lambda arr: float(np.abs(np.maximum(arr, 0) - target).mean())
    assert rel_err(leaf.grad, numeric_grad(f, x.copy())) < 1e-6


@given(st.integers(0, 2**31 - 1))
def test_random_graph_gradients(seed):
    rng = np.random.default_rng(seed)
    x = ad.leaf(rng.normal(size=(2, 6, 3)))

    def builder(p):
        h = ad.tanh(ad.conv1d(x, p["w"], p["b"]))
        h = ad.mul(ad.sigmoid(h), p["g"])
        return ad.sum_all(ad.mul(h, h))

    params = {"w": rng.normal(size=(3, 3, 2)), "b": rng.normal(size=2), "g": rng.normal(size=2)}
    assert ad.grad_check(builder, params).passed


def test_grad_check_detects_wrong_gradient(monkeypatch):
    original = ad.PRIMITIVES["tanh"]
    monkeypatch.setitem(ad.PRIMITIVES, "tanh",
                        ad.Primitive(original.forward, lambda g, node: (2.0 * original.backward(g, node)[0],), 1))
    report = ad.grad_check(lambda p: ad.sum_all(ad.tanh(p["x"])), {"x": np.array([0.3, -0.2])})
    assert not report.passed and report.failures == ["x"]


def test_grad_check_rejects_nondeterministic_builder():
    draws = iter(range(100))
    with pytest.raises(ad.NonDeterministicBuilderError):
        ad.grad_check(lambda p: ad.sum_all(ad.mul(p["x"], ad.leaf([float(next(draws))]))),
                      {"x": np.array([1.0])})


def test_grad_check_sampling_limits_entries(rng):
    report = ad.grad_check(lambda p: ad.sum_all(ad.tanh(p["x"])), {"x": rng.normal(size=(10, 10))},
                           max_entries=7)
    assert report.checked["x"] == 7 and report.passed
