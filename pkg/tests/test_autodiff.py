import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import signal

from ctxot import autodiff as ad
from ctxot.autodiff import DimensionError, Tensor
from oracles import check_grad, rel_error, tape_gradient

RNG = np.random.default_rng(1234)


def rand(*shape, lo=-2.0, hi=2.0):
    return RNG.uniform(lo, hi, size=shape)


# -- forward values ----------------------------------------------------------


def test_conv_scalar_kernel_scales():
    out = ad.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.full((1, 1, 1, 1), 2.0)))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))


def test_conv_stride_shape():
    out = ad.conv2d(Tensor(rand(1, 1, 4, 4)), Tensor(rand(1, 1, 2, 2)), stride=2)
    assert out.shape == (1, 1, 2, 2)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)])
def test_conv_matches_scipy_correlate(stride, padding):
    x, k = rand(2, 3, 7, 6), rand(4, 3, 3, 3)
    out = ad.conv2d(Tensor(x), Tensor(k), stride=stride, padding=padding).data
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ref = np.zeros((2, 4) + signal.correlate(xp[0, 0], k[0, 0], mode="valid").shape)
    for b in range(2):
        for o in range(4):
            ref[b, o] = sum(signal.correlate(xp[b, c], k[o, c], mode="valid") for c in range(3))
    np.testing.assert_allclose(out, ref[:, :, ::stride, ::stride], rtol=1e-12, atol=1e-12)


def test_conv_errors_name_axes():
    with pytest.raises(DimensionError, match="channel"):
        ad.conv2d(Tensor(rand(1, 2, 5, 5)), Tensor(rand(1, 3, 3, 3)))
    with pytest.raises(DimensionError):
        ad.conv2d(Tensor(rand(1, 1, 2, 2)), Tensor(rand(1, 1, 3, 3)))
    with pytest.raises(ValueError):
        ad.conv2d(Tensor(rand(1, 1, 4, 4)), Tensor(rand(1, 1, 3, 3)), stride=0)


def test_elementwise_definitions():
    assert ad.leaky_relu(Tensor(-1.0)).item() == pytest.approx(-0.2)
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5
    assert ad.sqrt(Tensor(4.0), eps=5.0).item() == 3.0
    np.testing.assert_allclose(ad.sigmoid(Tensor(np.array([-800.0, 800.0]))).data, [0.0, 1.0])


def test_reduction_values():
    np.testing.assert_array_equal(ad.min_over_axis(Tensor(np.array([[2.0, 1.0], [1.0, 2.0]])), 1).data, [1, 1])
    assert ad.mean(Tensor(np.array([1.0, 2, 3, 4]))).item() == 2.5
    with pytest.raises(DimensionError):
        ad.sum(Tensor(rand(2, 2)), axis=2)
    with pytest.raises(DimensionError):
        ad.min_over_axis(Tensor(rand(2, 2)), -3)


def test_min_tie_goes_to_lowest_index():
    g = tape_gradient(lambda a: ad.min_over_axis(a, 0), [np.array([3.0, 1.0, 1.0])], 0)
    np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])


def test_upsample_values():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])[None, None]
    out = ad.upsample_nearest(Tensor(x), 2).data[0, 0]
    np.testing.assert_array_equal(out, np.kron(x[0, 0], np.ones((2, 2))))
    np.testing.assert_array_equal(ad.upsample_nearest(Tensor(x), 1).data, x)
    with pytest.raises(ValueError):
        ad.upsample_nearest(Tensor(x), 0)


def test_channel_helpers():
    assert ad.global_average_pool(Tensor(np.full((2, 3, 4, 4), 0.7))).data == pytest.approx(np.full((2, 3), 0.7))
    cat = ad.concat_channels([Tensor(rand(1, 2, 3, 3)), Tensor(rand(1, 3, 3, 3))])
    assert cat.shape == (1, 5, 3, 3)
    with pytest.raises(DimensionError):
        ad.concat_channels([Tensor(rand(1, 2, 3, 3)), Tensor(rand(1, 3, 4, 3))])
    with pytest.raises(DimensionError):
        ad.matvec(Tensor(rand(4, 3)), Tensor(rand(4)))


def test_shape_rules():
    with pytest.raises(DimensionError):
        ad.add(Tensor(rand(2, 3)), Tensor(rand(3)))
    assert ad.mul(Tensor(rand(2, 3)), 2.0).shape == (2, 3)
    assert ad.broadcast_to(Tensor(rand(2, 1)), (2, 5)).shape == (2, 5)


def test_pairwise_sqdist_exact_zero_on_identical_rows():
    a = rand(5, 7)
    d = ad.pairwise_sqdist(Tensor(a), Tensor(a)).data
    assert np.all(np.diag(d) == 0.0)
    ref = ((a[:, None, :] - a[None, :, :]) ** 2).sum(-1)
    np.testing.assert_allclose(d, ref, rtol=1e-13, atol=1e-13)


# -- tape semantics ----------------------------------------------------------


def test_detached_tensor_gets_no_gradient():
    x = Tensor(rand(3), requires_grad=True)
    y = x.detach()
    g = ad.grad(ad.sum(ad.mul(y, y)), [x])
    assert g == [None]


def test_no_grad_blocks_recording():
    x = Tensor(rand(3), requires_grad=True)
    with ad.no_grad():
        y = ad.exp(x)
    assert y.is_leaf and not y.requires_grad


def test_backward_accumulates_into_leaves():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    ad.sum(ad.square(x)).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_tape_linearity():
    a = rand(4)
    f1 = lambda x: ad.sum(ad.exp(x))
    f2 = lambda x: ad.sum(ad.tanh(ad.square(x)))
    both = tape_gradient(lambda x: ad.add(f1(x), f2(x)), [a], 0)
    np.testing.assert_allclose(both, tape_gradient(f1, [a], 0) + tape_gradient(f2, [a], 0), rtol=1e-14)


def test_forward_bit_deterministic():
    x, k = rand(2, 3, 8, 8), rand(5, 3, 3, 3)
    first = ad.conv2d(Tensor(x), Tensor(k), padding=1).data
    second = ad.conv2d(Tensor(x), Tensor(k), padding=1).data
    assert first.tobytes() == second.tobytes()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-2, 2)))
def test_sum_of_squares_gradient_property(x):
    np.testing.assert_allclose(tape_gradient(lambda t: ad.sum(ad.square(t)), [x], 0), 2 * x, rtol=1e-14)


# -- gradient checks per op --------------------------------------------------

GRADCHECKS = {
    "add": (lambda a, b: ad.sum(ad.mul(ad.add(a, b), ad.add(a, b))), [rand(3, 2), rand(3, 2)]),
    "sub": (lambda a, b: ad.sum(ad.square(ad.sub(a, b))), [rand(4), rand(4)]),
    "mul": (lambda a, b: ad.sum(ad.mul(a, b)), [rand(2, 3), rand(2, 3)]),
    "div": (lambda a, b: ad.sum(ad.div(a, b)), [rand(3), rand(3, lo=0.5, hi=2.0)]),
    "scalar_mul": (lambda a, s: ad.sum(ad.mul(a, s)), [rand(3), rand()]),
    "neg": (lambda a: ad.sum(ad.mul(ad.neg(a), a)), [rand(3)]),
    "exp_square": (lambda a: ad.sum(ad.exp(ad.square(a))), [rand(3)]),
    "sqrt_eps": (lambda a: ad.sum(ad.sqrt(ad.square(a), 1e-3)), [rand(4)]),
    "sigmoid": (lambda a: ad.sum(ad.mul(ad.sigmoid(a), a)), [rand(5)]),
    "tanh": (lambda a: ad.sum(ad.mul(ad.tanh(a), a)), [rand(5)]),
    "leaky_relu": (lambda a: ad.sum(ad.mul(ad.leaky_relu(a), a)), [rand(6)]),
    "mean_axis": (lambda a: ad.sum(ad.square(ad.mean(a, axis=1))), [rand(3, 4)]),
    "sum_keepdims": (lambda a: ad.sum(ad.square(ad.sum(a, axis=0, keepdims=True))), [rand(3, 4)]),
    "min_over_axis": (lambda a: ad.sum(ad.square(ad.min_over_axis(a, 0))), [rand(4, 3)]),
    "broadcast_to": (lambda a: ad.sum(ad.square(ad.broadcast_to(a, (3, 4)))), [rand(3, 1)]),
    "reshape_transpose": (lambda a: ad.sum(ad.mul(ad.transpose(ad.reshape(a, (3, 4))), ad.Tensor(np.arange(12.0).reshape(4, 3)))), [rand(12)]),
    "matmul": (lambda a, b: ad.sum(ad.square(ad.matmul(a, b))), [rand(3, 4), rand(4, 2)]),
    "matvec": (lambda a, v: ad.sum(ad.square(ad.matvec(a, v))), [rand(4, 3), rand(3)]),
    "pairwise_sqdist": (lambda a, b: ad.sum(ad.exp(ad.mul(ad.pairwise_sqdist(a, b), -0.3))), [rand(3, 4), rand(5, 4)]),
    "conv2d": (lambda x, k: ad.sum(ad.square(ad.conv2d(x, k))), [rand(1, 2, 5, 5), rand(3, 2, 3, 3)]),
    "conv2d_stride_pad_bias": (lambda x, k, b: ad.sum(ad.square(ad.conv2d(x, k, b, stride=2, padding=1))), [rand(2, 2, 6, 5), rand(3, 2, 3, 3), rand(3)]),
    "upsample": (lambda x: ad.sum(ad.mul(ad.upsample_nearest(x, 2), ad.Tensor(np.arange(16.0).reshape(1, 1, 4, 4)))), [rand(1, 1, 2, 2)]),
    "concat": (lambda a, b: ad.sum(ad.square(ad.concat_channels([a, b]))), [rand(1, 2, 3, 3), rand(1, 1, 3, 3)]),
    "slice": (lambda a: ad.sum(ad.square(ad.slice_axis(a, 1, 3, axis=1))), [rand(1, 4, 2, 2)]),
    "gap": (lambda a: ad.sum(ad.square(ad.global_average_pool(a))), [rand(2, 3, 4, 4)]),
}


@pytest.mark.parametrize("name", sorted(GRADCHECKS))
def test_gradcheck(name):
    fn, inputs = GRADCHECKS[name]
    assert check_grad(fn, inputs) < 1e-4


def test_second_order_gradient():
    # d/dx of ||d/dx f||^2 for f = sum(tanh(W x)) checked against finite differences.
    w = rand(3, 4)

    def outer(x):
        (g,) = ad.grad(ad.sum(ad.tanh(ad.matvec(ad.Tensor(w), x))), [x], create_graph=True)
        return ad.sum(ad.square(g))

    x0 = rand(4)
    leaf = Tensor(x0, requires_grad=True)
    (analytic,) = ad.grad(outer(leaf), [leaf])
    numeric = np.zeros(4)
    for i in range(4):
        for sign in (1, -1):
            xp = x0.copy()
            xp[i] += sign * 1e-5
            numeric[i] += sign * outer(Tensor(xp, requires_grad=True)).item() / 2e-5
    assert rel_error(analytic.data, numeric) < 1e-4


def test_library_gradient_error_agrees():
    fn, inputs = GRADCHECKS["conv2d"]
    assert ad.gradient_error(fn, inputs) < 1e-4
    bad = lambda a: ad.Tensor(float(np.sum(a.data ** 2)))
    assert ad.gradient_error(bad, [rand(3)]) >= 1.0
