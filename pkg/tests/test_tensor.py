import numpy as np
import pytest

from tdae import tensor as T

from oracles import central_difference, conv2d_loops


def test_add_elementwise():
    out = T.add(T.Tensor([1.0, 2.0]), T.Tensor([3.0, 4.0]))
    assert np.array_equal(out.data, [4.0, 6.0])


def test_tanh_zero():
    out = T.tanh(T.Tensor(np.zeros((3, 3))))
    assert np.array_equal(out.data, np.zeros((3, 3)))


def test_conv2d_ones_against_loop_reference():
    x = np.ones((3, 3, 1))
    # even-sized kernels are rejected, use 3x3 ones instead and check the
    # interior sums against the loop oracle
    k = np.ones((3, 3, 1, 1))
    out = T.conv2d(T.Tensor(x), T.Tensor(k))
    ref = conv2d_loops(x, k)
    assert out.data[1, 1, 0] == 9.0
    np.testing.assert_allclose(out.data, ref, rtol=0, atol=1e-12)


def test_conv2d_random_against_loop_reference():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 5, 3))
    k = rng.normal(size=(3, 3, 3, 4))
    out = T.conv2d(T.Tensor(x), T.Tensor(k))
    ref = conv2d_loops(x, k)
    np.testing.assert_allclose(out.data, ref, rtol=1e-12, atol=1e-12)


def test_shape_mismatch_raises():
    with pytest.raises(T.ShapeError):
        T.add(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4,))))
    with pytest.raises(T.ShapeError):
        T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 2))))
    with pytest.raises(T.ShapeError):
        T.conv2d(T.Tensor(np.zeros((4, 4, 2))), T.Tensor(np.zeros((3, 3, 3, 1))))
    with pytest.raises(T.ShapeError):
        T.broadcast(T.Tensor(np.zeros((3, 5))), (5,))


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        T.Tensor([1.0, np.nan])
    with pytest.raises(ValueError):
        T.Tensor([np.inf])


def test_backward_sum_is_ones():
    x = T.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    grads = T.backward(T.tsum(x))
    assert np.array_equal(grads[x].data, np.ones((2, 3)))


def test_backward_mse_at_target_is_zero():
    t = np.linspace(0, 1, 12).reshape(3, 4)
    x = T.Tensor(t, requires_grad=True)
    d = T.sub(x, T.Tensor(t))
    loss = T.tmean(T.mul(d, d))
    grads = T.backward(loss)
    assert np.array_equal(grads[x].data, np.zeros((3, 4)))


def test_backward_requires_scalar():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(T.GraphError):
        T.backward(T.add(x, x))


def test_backward_leaf_not_in_graph():
    x = T.Tensor(np.ones(3), requires_grad=True)
    other = T.Tensor(np.ones(3), requires_grad=True)
    loss = T.tsum(x)
    with pytest.raises(T.GraphError):
        T.backward(loss, leaves=[other])


def _two_layer_net(params, x):
    w1, b1, w2 = params
    h = T.tanh(T.add(T.matmul(x, w1), b1))
    out = T.matmul(h, w2)
    return T.tmean(T.mul(out, out))


def test_gradcheck_two_layer_tanh_network():
    rng = np.random.default_rng(7)
    x_val = rng.normal(size=(5,))
    w1_val = rng.normal(size=(5, 4)) * 0.5
    b1_val = rng.normal(size=(4,)) * 0.1
    w2_val = rng.normal(size=(4,)) * 0.5

    x = T.Tensor(x_val, requires_grad=True)
    w1, b1, w2 = T.Tensor(w1_val), T.Tensor(b1_val), T.Tensor(w2_val)
    loss = _two_layer_net((w1, b1, w2), x)
    grad = T.backward(loss)[x].data

    def f(v):
        xt = T.Tensor(v)
        return _two_layer_net((w1, b1, w2), xt).item()

    ref = central_difference(f, x_val, step=1e-4)
    rel = np.abs(grad - ref) / np.maximum(np.abs(ref), 1e-8)
    assert rel.max() < 1e-5


@pytest.mark.parametrize("seed", range(4))
def test_gradcheck_composed_ops(seed):
    # composes every differentiable op into one scalar and checks against
    # central differences
    rng = np.random.default_rng(seed)
    x_val = rng.uniform(-1, 1, size=(4, 4, 2))
    k_val = rng.normal(size=(3, 3, 2, 3)) * 0.4
    m_val = rng.normal(size=(3, 3)) * 0.5
    v_val = rng.normal(size=(3,)) * 0.3

    def network(x):
        k = T.Tensor(k_val)
        y = T.conv2d(x, k)                       # (4,4,3)
        y = T.tanh(y)
        bias = T.matmul(T.Tensor(m_val), T.Tensor(v_val))   # (3,)
        y = T.add(y, T.broadcast(T.Tensor(bias.data), (4, 4, 3)))
        y = T.softplus(y)
        z = T.sub(T.mul(y, y), T.smul(y, 0.5))
        return T.tmean(z)

    x = T.Tensor(x_val, requires_grad=True)
    grad = T.backward(network(x))[x].data

    def f(v):
        return network(T.Tensor(v)).item()

    ref = central_difference(f, x_val, step=1e-5)
    denom = np.maximum(np.abs(ref), 1e-6)
    assert (np.abs(grad - ref) / denom).max() < 1e-5


def test_backward_deterministic_bitwise():
    rng = np.random.default_rng(3)
    x_val = rng.normal(size=(4, 4, 2))
    k_val = rng.normal(size=(3, 3, 2, 2))

    def run():
        x = T.Tensor(x_val, requires_grad=True)
        y = T.tanh(T.conv2d(x, T.Tensor(k_val)))
        loss = T.tmean(T.mul(y, y))
        return T.backward(loss)[x].data

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)
    # same graph twice as well
    x = T.Tensor(x_val, requires_grad=True)
    y = T.tanh(T.conv2d(x, T.Tensor(k_val)))
    loss = T.tmean(T.mul(y, y))
    assert np.array_equal(T.backward(loss)[x].data, T.backward(loss)[x].data)


def test_backward_linearity():
    rng = np.random.default_rng(11)
    x_val = rng.normal(size=(6,))
    w_val = rng.normal(size=(6, 6))

    def make_f(x):
        return T.tmean(T.mul(T.tanh(T.matmul(x, T.Tensor(w_val))), x))

    def make_g(x):
        return T.tsum(T.mul(x, x))

    a, b = 0.7, -1.3
    x = T.Tensor(x_val, requires_grad=True)
    combined = T.add(T.smul(make_f(x), a), T.smul(make_g(x), b))
    g_combined = T.backward(combined)[x].data

    x1 = T.Tensor(x_val, requires_grad=True)
    gf = T.backward(make_f(x1))[x1].data
    x2 = T.Tensor(x_val, requires_grad=True)
    gg = T.backward(make_g(x2))[x2].data
    np.testing.assert_allclose(g_combined, a * gf + b * gg, rtol=1e-12, atol=1e-14)


def test_gradient_accumulates_over_reused_leaf():
    x = T.Tensor([2.0], requires_grad=True)
    # f = x*x + 3x -> df/dx = 2x + 3 = 7
    loss = T.tsum(T.add(T.mul(x, x), T.smul(x, 3.0)))
    grads = T.backward(loss)
    assert grads[x].data[0] == pytest.approx(7.0, abs=1e-12)
