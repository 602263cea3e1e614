import numpy as np
import pytest

from utils.gradcheck_utils import (
    GRADCHECK_TOLERANCE,
    GRADCHECKS,
    _input_size,
    numerical_gradient,
    relative_error,
    run_gradcheck_suite,
)
from utils.tensor_utils import conv2d_backward, conv2d_forward, maxpool2d_backward, maxpool2d_forward


def test_numerical_gradient_of_quadratic():
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    grad = numerical_gradient(lambda v: float(np.sum(v ** 2)), x)
    np.testing.assert_allclose(grad, 2 * x, rtol=1e-6)
    # 入参不被修改
    np.testing.assert_array_equal(x, [[1.0, -2.0], [0.5, 3.0]])


def test_relative_error_bounds():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.ones(3), np.ones(3)) == 0.0
    assert relative_error(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(np.sqrt(2))


def test_suite_covers_every_backward_op():
    assert set(GRADCHECKS) == {
        "conv2d", "maxpool2d", "dense", "relu", "softmax_cross_entropy", "hinge", "softmax_regression",
    }


@pytest.mark.parametrize("seed", [0, 1])
def test_all_ops_pass_within_tolerance(seed):
    worst = run_gradcheck_suite(n_configs=5, seed=seed)
    assert set(worst) == set(GRADCHECKS)
    for name, error in worst.items():
        assert error <= GRADCHECK_TOLERANCE, f"{name}: {error:.2e}"


# =============================================================================
# 步长 / 填充 / 重叠窗口
# =============================================================================


@pytest.mark.parametrize("stride, padding", [(2, 1), (2, 0), (1, 1)])
def test_conv_backward_with_stride_and_padding(stride, padding):
    rng = np.random.default_rng(stride * 10 + padding)
    x = rng.standard_normal((2, 2, 7, 7))
    kernels = rng.standard_normal((3, 2, 3, 3))
    bias = rng.standard_normal(3)
    out = conv2d_forward(x, kernels, bias, stride, padding)
    r = rng.standard_normal(out.shape)
    grads = conv2d_backward(x, kernels, stride, padding, r)

    def loss(xx, kk):
        return float(np.sum(conv2d_forward(xx, kk, bias, stride, padding).astype(np.float64) * r))

    assert relative_error(grads.d_input, numerical_gradient(lambda v: loss(v, kernels), x)) <= GRADCHECK_TOLERANCE
    assert relative_error(grads.d_params[0], numerical_gradient(lambda v: loss(x, v), kernels)) <= GRADCHECK_TOLERANCE


def test_maxpool_backward_with_overlapping_windows():
    rng = np.random.default_rng(3)
    x = rng.permutation(2 * 6 * 6).reshape(1, 2, 6, 6) * 0.1
    out, index = maxpool2d_forward(x, 3, 1)
    assert out.shape == (1, 2, 4, 4)
    r = rng.standard_normal(out.shape)
    analytic = maxpool2d_backward(index, r)
    numeric = numerical_gradient(lambda v: float(np.sum(maxpool2d_forward(v, 3, 1)[0].astype(np.float64) * r)), x)
    assert relative_error(analytic, numeric) <= GRADCHECK_TOLERANCE


@pytest.mark.parametrize("out_size, k, stride, pad", [(1, 3, 2, 1), (3, 3, 2, 1), (2, 1, 1, 1), (1, 2, 1, 0)])
def test_suite_input_sizes_give_integral_outputs(out_size, k, stride, pad):
    size = _input_size(out_size, k, stride, pad)
    assert size >= 1
    assert (size + 2 * pad - k) % stride == 0
