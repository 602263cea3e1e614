'''
Description  : 中心差分梯度检查，覆盖所有反向算子
'''

import logging
from typing import Callable, Dict, List

import numpy as np

from utils.classic_utils import hinge_loss_and_grad, softmax_regression_loss_and_grad
from utils.tensor_utils import (
    conv2d_backward,
    conv2d_forward,
    cross_entropy,
    dense_backward,
    dense_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
    softmax,
)

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-2


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """
    中心差分 (f(x+eps) − f(x−eps)) / 2eps，逐元素扰动

    Args:
        f: 标量函数
        x: 求导点（不会被修改）
        eps: 步长

    Returns:
        与 x 同形的 float64 数值梯度
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    for j in range(flat.size):
        original = flat[j]
        flat[j] = original + eps
        f_plus = float(f(x))
        flat[j] = original - eps
        f_minus = float(f(x))
        flat[j] = original
        grad.reshape(-1)[j] = (f_plus - f_minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)"""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-8))


# region 各算子的单次检查（返回最大相对误差）


def _check_conv(rng: np.random.Generator) -> float:
    n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.integers(1, 4))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    # 按输出尺寸反推输入尺寸，保证 (H + 2·pad − k) 能被 stride 整除
    h, w = (_input_size(int(rng.integers(1, 4)), k, stride, pad) for _ in range(2))
    x = rng.standard_normal((n, c, h, w))
    kernels = rng.standard_normal((o, c, k, k))
    bias = rng.standard_normal(o)
    out = conv2d_forward(x, kernels, bias, stride, pad)
    r = rng.standard_normal(out.shape)
    grads = conv2d_backward(x, kernels, stride, pad, r)

    def loss(xx, kk, bb):
        return float(np.sum(conv2d_forward(xx, kk, bb, stride, pad).astype(np.float64) * r))

    return max(
        relative_error(grads.d_input, numerical_gradient(lambda v: loss(v, kernels, bias), x)),
        relative_error(grads.d_params[0], numerical_gradient(lambda v: loss(x, v, bias), kernels)),
        relative_error(grads.d_params[1], numerical_gradient(lambda v: loss(x, kernels, v), bias)),
    )


def _input_size(out_size: int, k: int, stride: int, pad: int) -> int:
    size = (out_size - 1) * stride + k - 2 * pad
    while size < 1:
        out_size += 1
        size = (out_size - 1) * stride + k - 2 * pad
    return size


def _check_maxpool(rng: np.random.Generator) -> float:
    n, c = rng.integers(1, 3), rng.integers(1, 3)
    # 窗口大于步长时相邻窗口重叠，同一输入可在多个窗口胜出
    window = int(rng.integers(2, 4))
    stride = int(rng.integers(1, window + 1))
    h, w = (_input_size(int(rng.integers(1, 4)), window, stride, 0) for _ in range(2))
    # 取值间隔 0.1，扰动不会改变最大值位置
    x = rng.permutation(n * c * h * w).reshape(n, c, h, w) * 0.1
    out, index = maxpool2d_forward(x, window, stride)
    r = rng.standard_normal(out.shape)
    analytic = maxpool2d_backward(index, r)
    numeric = numerical_gradient(
        lambda v: float(np.sum(maxpool2d_forward(v, window, stride)[0].astype(np.float64) * r)), x
    )
    return relative_error(analytic, numeric)

def _check_dense(rng: np.random.Generator) -> float:
    n, f, u = rng.integers(1, 5), rng.integers(1, 7), rng.integers(1, 6)
    x = rng.standard_normal((n, f))
    weights = rng.standard_normal((f, u))
    bias = rng.standard_normal(u)
    r = rng.standard_normal((n, u))
    grads = dense_backward(x, weights, r)

    def loss(xx, ww, bb):
        return float(np.sum(dense_forward(xx, ww, bb).astype(np.float64) * r))

    return max(
        relative_error(grads.d_input, numerical_gradient(lambda v: loss(v, weights, bias), x)),
        relative_error(grads.d_params[0], numerical_gradient(lambda v: loss(x, v, bias), weights)),
        relative_error(grads.d_params[1], numerical_gradient(lambda v: loss(x, weights, v), bias)),
    )


def _check_relu(rng: np.random.Generator) -> float:
    shape = tuple(rng.integers(1, 5, size=2))
    # 远离 0 的折点
    x = rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.1, 1.0, size=shape)
    r = rng.standard_normal(shape)
    analytic = relu_backward(x, r)
    numeric = numerical_gradient(lambda v: float(np.sum(relu_forward(v).astype(np.float64) * r)), x)
    return relative_error(analytic, numeric)


def _check_softmax_ce(rng: np.random.Generator) -> float:
    n, k = rng.integers(1, 5), rng.integers(2, 6)
    logits = rng.standard_normal((n, k))
    labels = rng.integers(0, k, size=n)
    _, analytic = cross_entropy(softmax(logits), labels)
    numeric = numerical_gradient(lambda v: cross_entropy(softmax(v), labels)[0], logits)
    return relative_error(analytic, numeric)


def _linear_problem(rng: np.random.Generator):
    n, f, k = rng.integers(2, 6), rng.integers(1, 5), rng.integers(2, 5)
    return (
        rng.standard_normal((k, f)), rng.standard_normal(k),
        rng.standard_normal((n, f)), rng.integers(0, k, size=n), float(rng.uniform(0.0, 0.1)),
    )


def _check_hinge(rng: np.random.Generator) -> float:
    while True:
        W, b, X, y, reg = _linear_problem(rng)
        targets = -np.ones((X.shape[0], W.shape[0]))
        targets[np.arange(X.shape[0]), y] = 1.0
        margins = 1.0 - targets * (X @ W.T + b)
        # 只在非折点处检查
        if np.abs(margins).min() > 0.05:
            break
    _, dW, db = hinge_loss_and_grad(W, b, X, y, reg)
    return max(
        relative_error(dW, numerical_gradient(lambda v: hinge_loss_and_grad(v, b, X, y, reg)[0], W)),
        relative_error(db, numerical_gradient(lambda v: hinge_loss_and_grad(W, v, X, y, reg)[0], b)),
    )


def _check_softmax_regression(rng: np.random.Generator) -> float:
    W, b, X, y, reg = _linear_problem(rng)
    _, dW, db = softmax_regression_loss_and_grad(W, b, X, y, reg)
    return max(
        relative_error(dW, numerical_gradient(lambda v: softmax_regression_loss_and_grad(v, b, X, y, reg)[0], W)),
        relative_error(db, numerical_gradient(lambda v: softmax_regression_loss_and_grad(W, v, X, y, reg)[0], b)),
    )


# endregion

GRADCHECKS: Dict[str, Callable[[np.random.Generator], float]] = {
    "conv2d": _check_conv,
    "maxpool2d": _check_maxpool,
    "dense": _check_dense,
    "relu": _check_relu,
    "softmax_cross_entropy": _check_softmax_ce,
    "hinge": _check_hinge,
    "softmax_regression": _check_softmax_regression,
}


def run_gradcheck_suite(n_configs: int = 20, seed: int = 0) -> Dict[str, float]:
    """
    对每个反向算子在 n_configs 个随机配置上做中心差分检查

    Returns:
        算子名 → 最大相对误差
    """
    rng = np.random.default_rng(seed)
    worst: Dict[str, float] = {}
    for name, check in GRADCHECKS.items():
        errors: List[float] = [check(rng) for _ in range(n_configs)]
        worst[name] = max(errors)
        mark = "✅" if worst[name] <= GRADCHECK_TOLERANCE else "❌"
        logger.info(f"{mark} {name}: {n_configs} 组配置, 最大相对误差 {worst[name]:.2e}")
    return worst
