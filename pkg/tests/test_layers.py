"""Unit tests for convolution and resampling primitives."""
import numpy as np
import pytest

from burst_sr.layers import conv2d, conv2d_backward, relu, relu_backward, resize_matrix, upsample, upsample_backward


def test_conv2d_delta_kernel_is_identity(rng):
    """Test a centred unit tap reproduces the input."""
    x = rng.random((1, 5, 6, 2))
    weight = np.zeros((3, 3, 2, 2))
    weight[1, 1, 0, 0] = weight[1, 1, 1, 1] = 1.0
    y, _ = conv2d(x, weight, np.zeros(2))
    np.testing.assert_allclose(y, x, atol=1e-15)


def test_conv2d_stride_shape(rng):
    """Test stride 2 halves the spatial size, rounding up."""
    weight = rng.random((3, 3, 1, 4))
    assert conv2d(rng.random((1, 8, 8, 1)), weight, np.zeros(4), stride=2)[0].shape == (1, 4, 4, 4)
    assert conv2d(rng.random((1, 7, 5, 1)), weight, np.zeros(4), stride=2)[0].shape == (1, 4, 3, 4)


@pytest.mark.parametrize('stride', [1, 2])
def test_conv2d_backward_matches_finite_differences(rng, stride):
    """Test input, weight and bias gradients against central differences."""
    x = rng.standard_normal((1, 5, 4, 2))
    weight = rng.standard_normal((3, 3, 2, 3))
    bias = rng.standard_normal(3)
    y, cache = conv2d(x, weight, bias, stride)
    upstream = rng.standard_normal(y.shape)
    dx, dw, db = conv2d_backward(upstream, cache, weight)

    def loss():
        return float(np.sum(conv2d(x, weight, bias, stride)[0] * upstream))

    step = 1e-6
    for array, grad in ((x, dx), (weight, dw), (bias, db)):
        for idx in list(np.ndindex(array.shape))[::3]:
            original = array[idx]
            array[idx] = original + step
            plus = loss()
            array[idx] = original - step
            minus = loss()
            array[idx] = original
            assert grad[idx] == pytest.approx((plus - minus) / (2 * step), rel=1e-5, abs=1e-7)


def test_relu_backward():
    """Test the ReLU mask."""
    pre = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(relu(pre), [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(relu_backward(np.ones(3), pre), [0.0, 0.0, 1.0])


def test_resize_matrix_rows_sum_to_one():
    """Test bilinear resampling preserves constants."""
    for n_out, n_in in ((8, 4), (7, 4), (3, 3)):
        np.testing.assert_allclose(resize_matrix(n_out, n_in).sum(axis=1), 1.0)
    np.testing.assert_allclose(resize_matrix(5, 5), np.eye(5))


def test_upsample_backward_is_adjoint(rng):
    """Test <up(x), g> equals <x, up^T(g)>."""
    x = rng.standard_normal((1, 3, 4, 2))
    y, cache = upsample(x, (6, 7))
    g = rng.standard_normal(y.shape)
    assert np.sum(y * g) == pytest.approx(np.sum(x * upsample_backward(g, cache)), rel=1e-12)
