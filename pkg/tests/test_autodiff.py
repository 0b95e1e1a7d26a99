import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pullsim import autodiff as ad
from pullsim.nets import Mlp


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_record_add_scalar():
    tape = ad.Tape()
    out = tape.record("add", [tape.leaf(2.0), tape.leaf(3.0)])
    assert out.value[0, 0] == 5.0


def test_record_relu_negative():
    tape = ad.Tape()
    assert tape.record("relu", [tape.leaf(-1.0)]).value[0, 0] == 0.0


def test_record_matmul_shape():
    tape = ad.Tape()
    out = tape.record("matmul", [tape.leaf(np.ones((2, 3))), tape.leaf(np.ones((3, 1)))])
    assert out.shape == (2, 1)


def test_matmul_shape_mismatch_reports_shapes():
    tape = ad.Tape()
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\) @ \(2, 1\)"):
        tape.record("matmul", [tape.leaf(np.ones((2, 3))), tape.leaf(np.ones((2, 1)))])


def test_unknown_op_rejected():
    tape = ad.Tape()
    with pytest.raises(ValueError, match="unknown op"):
        tape.record("conv", [tape.leaf(1.0)])


def test_square_gradient():
    value, (g,) = ad.grad(lambda x: ad.square(x), np.array([[3.0]]))
    assert value == 9.0
    assert g[0, 0] == 6.0


@pytest.mark.parametrize("x", [-1.0, 0.0])
def test_relu_flat_and_kink_gradient_is_zero(x):
    _, (g,) = ad.grad(lambda v: ad.relu(v), np.array([[x]]))
    assert g[0, 0] == 0.0


def test_non_scalar_backward_rejected():
    tape = ad.Tape()
    x = tape.leaf(np.ones((2, 1)))
    with pytest.raises(ad.ShapeError):
        tape.backward(x * 2.0)


def test_unreachable_leaf_gets_zero_gradient():
    tape = ad.Tape()
    x, y = tape.leaf(np.array([[1.0, 2.0]])), tape.leaf(np.array([[5.0]]))
    grads = tape.backward(ad.sum(ad.square(x)))
    np.testing.assert_array_equal(grads[y], np.zeros((1, 1)))
    np.testing.assert_array_equal(grads[x], [[2.0, 4.0]])


def test_constants_receive_no_gradient():
    tape = ad.Tape()
    c = tape.constant(np.array([[2.0]]))
    x = tape.leaf(np.array([[3.0]]))
    grads = tape.backward(c * x)
    assert grads[x][0, 0] == 2.0
    assert grads[c][0, 0] == 0.0


def test_parents_precede_children():
    tape = ad.Tape()
    x = tape.leaf(np.ones((1, 2)))
    ad.sum(ad.tanh(x * 3.0) + x)
    for i, parents in enumerate(tape._parents):
        assert all(p < i for p in parents)


def test_broadcast_gradient_sums_over_rows():
    b = np.array([[0.5, -1.0]])
    _, (gb,) = ad.grad(lambda v: ad.sum(np.ones((4, 1)) * v), b)
    np.testing.assert_array_equal(gb, [[4.0, 4.0]])


def test_where_routes_gradient_to_taken_branch():
    x = np.array([[-2.0], [3.0]])
    _, (g,) = ad.grad(lambda v: ad.sum(ad.where(x > 0, ad.square(v), 5.0 * v)), x)
    np.testing.assert_allclose(g, [[5.0], [6.0]])


def test_column_slice_and_concat_gradients():
    x = np.arange(6.0).reshape(2, 3)

    def f(v):
        return ad.sum(ad.concat([v[:, 2:3] * 2.0, ad.square(v[:, 0:1])], axis=1))

    _, (g,) = ad.grad(f, x)
    np.testing.assert_allclose(g, [[0.0, 0, 2.0], [6.0, 0, 2.0]])


def test_dual_path_helpers_on_arrays():
    x = np.array([[-1.0, 2.0]])
    np.testing.assert_array_equal(ad.relu(x), [[0.0, 2.0]])
    assert ad.sum(x).shape == (1, 1)
    np.testing.assert_allclose(ad.mean(x), [[0.5]])


@given(st.integers(0, 2**31 - 1))
def test_random_expression_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(0.5, 2.0, size=(3, 2))
    w = rng.normal(size=(2, 2))

    def f(v):
        h = ad.tanh(v @ w) * ad.exp(-0.3 * v) + ad.log(v) / (1.0 + ad.square(v))
        return ad.mean(ad.square(h))

    _, (g,) = ad.grad(f, x0)
    fd = central_diff(lambda a: float(f(a)[0, 0]), x0)
    assert np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd))) < 1e-4


@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_backward_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=(2, 3))

    def g1(v):
        return ad.sum(ad.tanh(v))

    def g2(v):
        return ad.mean(ad.square(v) * 2.0)

    _, (d1,) = ad.grad(g1, x0)
    _, (d2,) = ad.grad(g2, x0)
    _, (d12,) = ad.grad(lambda v: g1(v) * a + g2(v) * b, x0)
    np.testing.assert_allclose(d12, a * d1 + b * d2, rtol=0, atol=1e-12)


def test_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    net = Mlp.init((4, 16, 16, 2), rng)
    X = rng.normal(size=(5, 4))
    y = rng.normal(size=(5, 2))

    def loss(*params):
        return ad.mean(ad.square(net.forward(X, params) - y))

    _, grads = ad.grad(loss, *net.params())
    for i, p in enumerate(net.params()):
        def f(pi, i=i):
            ps = list(net.params())
            ps[i] = pi
            return float(loss(*ps)[0, 0])
        fd = central_diff(f, p)
        assert np.max(np.abs(grads[i] - fd) / np.maximum(1.0, np.abs(fd))) < 1e-4


def test_forward_backward_bit_identical():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 3))
    runs = [ad.grad(lambda v: ad.sum(ad.tanh(v @ v.value.T)), x) for _ in range(2)]
    assert runs[0][0] == runs[1][0]
    np.testing.assert_array_equal(runs[0][1][0], runs[1][1][0])
