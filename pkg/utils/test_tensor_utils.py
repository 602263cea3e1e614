import numpy as np
import pytest

from utils.errors import NumericError, ShapeError
from utils.tensor_utils import (
    conv2d_backward,
    conv2d_forward,
    cross_entropy,
    dense_backward,
    dense_forward,
    flatten_backward,
    flatten_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
    sgd_step,
    softmax,
)


# =============================================================================
# 朴素循环实现（对照）
# =============================================================================


def naive_conv(x, kernels, bias, stride, padding):
    n, c, h, w = x.shape
    o, _, k, _ = kernels.shape
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    out = np.zeros((n, o, out_h, out_w))
    for b in range(n):
        for oc in range(o):
            for i in range(out_h):
                for j in range(out_w):
                    patch = xp[b, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[b, oc, i, j] = np.sum(patch * kernels[oc]) + bias[oc]
    return out


def naive_maxpool(x, window, stride):
    n, c, h, w = x.shape
    out_h = (h - window) // stride + 1
    out_w = (w - window) // stride + 1
    out = np.zeros((n, c, out_h, out_w))
    for b in range(n):
        for ch in range(c):
            for i in range(out_h):
                for j in range(out_w):
                    out[b, ch, i, j] = x[b, ch, i * stride : i * stride + window, j * stride : j * stride + window].max()
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(42)


# =============================================================================
# 卷积
# =============================================================================


class TestConv2d:
    def test_matches_naive_oracle_on_random_shapes(self, rng):
        for _ in range(50):
            k = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 3))
            padding = int(rng.integers(0, 2))
            out_h, out_w = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            h = (out_h - 1) * stride + k - 2 * padding
            w = (out_w - 1) * stride + k - 2 * padding
            if h < 1 or w < 1:
                continue
            x = rng.uniform(-1, 1, size=(int(rng.integers(1, 3)), int(rng.integers(1, 4)), h, w)).astype(np.float32)
            kernels = rng.uniform(-1, 1, size=(int(rng.integers(1, 4)), x.shape[1], k, k)).astype(np.float32)
            bias = rng.uniform(-1, 1, size=kernels.shape[0]).astype(np.float32)

            out = conv2d_forward(x, kernels, bias, stride, padding)
            np.testing.assert_allclose(out, naive_conv(x, kernels, bias, stride, padding), atol=1e-5)

    def test_identity_kernel_returns_input(self, rng):
        x = rng.standard_normal((2, 1, 5, 5)).astype(np.float32)
        kernel = np.zeros((1, 1, 3, 3), dtype=np.float32)
        kernel[0, 0, 1, 1] = 1.0
        np.testing.assert_allclose(conv2d_forward(x, kernel, np.zeros(1), 1, 1), x, atol=1e-6)

    def test_non_integral_output_raises(self):
        with pytest.raises(ShapeError):
            conv2d_forward(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 3)), np.zeros(1), stride=2)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))

    def test_backward_shapes_and_bias_grad(self, rng):
        x = rng.standard_normal((2, 3, 6, 6))
        kernels = rng.standard_normal((4, 3, 3, 3))
        d_out = rng.standard_normal((2, 4, 6, 6))
        grads = conv2d_backward(x, kernels, 1, 1, d_out)
        assert grads.d_input.shape == x.shape
        assert grads.d_params[0].shape == kernels.shape
        np.testing.assert_allclose(grads.d_params[1], d_out.sum(axis=(0, 2, 3)), rtol=1e-5)


# =============================================================================
# 池化
# =============================================================================


class TestMaxPool2d:
    def test_matches_naive_oracle(self, rng):
        for _ in range(50):
            window = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 3))
            out_h, out_w = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            shape = (2, 2, (out_h - 1) * stride + window, (out_w - 1) * stride + window)
            x = rng.standard_normal(shape).astype(np.float32)
            out, _ = maxpool2d_forward(x, window, stride)
            np.testing.assert_allclose(out, naive_maxpool(x, window, stride), atol=1e-6)

    def test_tie_routes_to_first_in_row_major_order(self):
        x = np.ones((1, 1, 2, 2), dtype=np.float32)
        _, index = maxpool2d_forward(x, 2, 2)
        d_input = maxpool2d_backward(index, np.full((1, 1, 1, 1), 3.0))
        np.testing.assert_array_equal(d_input[0, 0], [[3.0, 0.0], [0.0, 0.0]])

    def test_backward_routes_to_winner(self):
        x = np.array([[[[1, 5], [2, 0]]]], dtype=np.float32)
        _, index = maxpool2d_forward(x, 2, 2)
        d_input = maxpool2d_backward(index, np.ones((1, 1, 1, 1)))
        np.testing.assert_array_equal(d_input[0, 0], [[0, 1], [0, 0]])

    def test_backward_shape_mismatch_raises(self):
        _, index = maxpool2d_forward(np.zeros((1, 1, 4, 4)), 2, 2)
        with pytest.raises(ShapeError):
            maxpool2d_backward(index, np.zeros((1, 1, 3, 3)))


# =============================================================================
# 全连接 / ReLU / Flatten
# =============================================================================


class TestDense:
    def test_matches_naive_oracle(self, rng):
        for _ in range(50):
            n, f, u = rng.integers(1, 6, size=3)
            x = rng.uniform(-1, 1, size=(n, f))
            weights = rng.uniform(-1, 1, size=(f, u))
            bias = rng.uniform(-1, 1, size=u)
            expected = np.array([[sum(x[i, p] * weights[p, j] for p in range(f)) + bias[j] for j in range(u)] for i in range(n)])
            np.testing.assert_allclose(dense_forward(x, weights, bias), expected, atol=1e-5)

    def test_backward_matches_closed_form(self, rng):
        x = rng.standard_normal((3, 4))
        weights = rng.standard_normal((4, 2))
        d_out = rng.standard_normal((3, 2))
        grads = dense_backward(x, weights, d_out)
        np.testing.assert_allclose(grads.d_input, d_out @ weights.T, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(grads.d_params[0], x.T @ d_out, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(grads.d_params[1], d_out.sum(axis=0), rtol=1e-5, atol=1e-6)

    def test_inner_dimension_mismatch_raises(self):
        with pytest.raises(ShapeError):
            dense_forward(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))


def test_relu_forward_and_backward():
    x = np.array([[-1.0, 0.0, 2.0]])
    np.testing.assert_array_equal(relu_forward(x), [[0.0, 0.0, 2.0]])
    np.testing.assert_array_equal(relu_backward(x, np.ones_like(x)), [[0.0, 0.0, 1.0]])


def test_flatten_round_trip(rng):
    x = rng.standard_normal((2, 3, 4, 5)).astype(np.float32)
    flat = flatten_forward(x)
    assert flat.shape == (2, 60)
    np.testing.assert_array_equal(flatten_backward(flat, x.shape), x)


# =============================================================================
# Softmax / 交叉熵 / SGD
# =============================================================================


class TestSoftmaxCrossEntropy:
    def test_rows_sum_to_one_and_large_logits_are_stable(self, rng):
        probs = softmax(np.vstack([rng.standard_normal((5, 4)), [[1000.0, 1000.0, -1000.0, 0.0]]]))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(probs[-1], [0.5, 0.5, 0.0, 0.0], atol=1e-6)

    def test_log_probabilities_are_recovered(self):
        np.testing.assert_allclose(softmax(np.log([[1.0, 2.0, 3.0]])), [[1 / 6, 2 / 6, 3 / 6]], atol=1e-6)

    def test_shift_invariant(self, rng):
        z = rng.standard_normal((4, 5))
        np.testing.assert_allclose(softmax(z + 7.5), softmax(z), atol=1e-6)

    def test_nan_logits_raise(self):
        with pytest.raises(NumericError):
            softmax(np.array([[np.nan, 0.0]]))

    def test_single_class_raises(self):
        with pytest.raises(ShapeError):
            softmax(np.zeros((2, 1)))

    def test_cross_entropy_uniform_is_log_k(self):
        loss, d_logits = cross_entropy(np.full((2, 4), 0.25), [0, 3])
        assert loss == pytest.approx(np.log(4), rel=1e-6)
        np.testing.assert_allclose(d_logits.sum(axis=1), 0.0, atol=1e-7)

    def test_cross_entropy_clamps_zero_probability(self):
        loss, _ = cross_entropy(np.array([[1.0, 0.0]]), [1])
        assert np.isfinite(loss)
        assert loss == pytest.approx(-np.log(1e-12), rel=1e-6)

    def test_label_out_of_range_raises(self):
        with pytest.raises(ShapeError):
            cross_entropy(np.full((1, 3), 1 / 3), [3])


class TestSgdStep:
    def test_known_two_steps(self):
        p, g, v = [np.array([1.0], dtype=np.float32)], [np.array([0.5], dtype=np.float32)], [np.zeros(1, dtype=np.float32)]
        p1, v1 = sgd_step(p, g, v, lr=0.1, momentum=0.9, weight_decay=0.0)
        np.testing.assert_allclose(v1[0], [-0.05], rtol=1e-6)
        np.testing.assert_allclose(p1[0], [0.95], rtol=1e-6)
        p2, _ = sgd_step(p1, g, v1, lr=0.1, momentum=0.9, weight_decay=0.0)
        np.testing.assert_allclose(p2[0], [0.855], rtol=1e-6)
        # 入参不被修改
        assert p[0][0] == 1.0 and v[0][0] == 0.0

    def test_weight_decay_shrinks_params_without_gradient(self):
        p = [np.array([2.0], dtype=np.float32)]
        new_p, _ = sgd_step(p, [np.zeros(1, dtype=np.float32)], [np.zeros(1, dtype=np.float32)], 0.1, 0.0, 0.5)
        np.testing.assert_allclose(new_p[0], [1.9], rtol=1e-6)

    def test_zero_lr_is_identity(self, rng):
        p = [rng.standard_normal((3, 2)).astype(np.float32)]
        new_p, _ = sgd_step(p, [np.ones((3, 2), dtype=np.float32)], [np.zeros((3, 2), dtype=np.float32)], 0.0, 0.9, 5e-4)
        np.testing.assert_array_equal(new_p[0], p[0])

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            sgd_step([np.zeros(2)], [np.zeros(3)], [np.zeros(2)], 0.1, 0.9, 0.0)
