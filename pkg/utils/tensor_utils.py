'''
Description  : 张量基础算子（前向 / 反向），所有学习器都基于这些算子构建
'''

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from utils.errors import NumericError, ShapeError

# 张量统一使用 float32 的 numpy 数组，按行优先存储
Tensor = np.ndarray

LOG_CLAMP = 1e-12


@dataclass
class LayerGrads:
    """单层反向传播的梯度：d_input 与输入同形，d_params 与参数逐一同形"""

    d_input: Tensor
    d_params: List[Tensor] = field(default_factory=list)


@dataclass
class PoolIndex:
    """
    最大池化的胜者索引表

    Args:
        indices: 每个输出格对应的输入扁平索引，形状同池化输出
        input_shape: 池化输入的形状
    """

    indices: np.ndarray
    input_shape: Tuple[int, ...]


def as_tensor(x) -> Tensor:
    """转换为连续存储的 float32 数组"""
    return np.ascontiguousarray(x, dtype=np.float32)


def _output_size(size: int, k: int, stride: int, padding: int, what: str) -> int:
    span = size + 2 * padding - k
    if stride < 1:
        raise ShapeError(f"{what}: stride 必须为正整数, 实际 {stride}")
    if span < 0 or span % stride != 0:
        raise ShapeError(
            f"{what}: 输出尺寸非整数 (size={size}, k={k}, stride={stride}, padding={padding})"
        )
    return span // stride + 1


def _im2col(xp: Tensor, k: int, stride: int, out_h: int, out_w: int) -> Tensor:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, out_h, out_w), dtype=np.float32)
    for u in range(k):
        for v in range(k):
            cols[:, :, u, v] = xp[
                :, :, u : u + stride * (out_h - 1) + 1 : stride, v : v + stride * (out_w - 1) + 1 : stride
            ]
    return cols


def _col2im(cols: Tensor, padded_shape: Tuple[int, ...], k: int, stride: int) -> Tensor:
    out_h, out_w = cols.shape[-2:]
    dxp = np.zeros(padded_shape, dtype=np.float32)
    for u in range(k):
        for v in range(k):
            dxp[
                :, :, u : u + stride * (out_h - 1) + 1 : stride, v : v + stride * (out_w - 1) + 1 : stride
            ] += cols[:, :, u, v]
    return dxp


def _check_conv_shapes(input: Tensor, kernels: Tensor) -> None:
    if input.ndim != 4:
        raise ShapeError(f"conv2d: 输入必须为 NCHW, 实际形状 {input.shape}")
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise ShapeError(f"conv2d: 卷积核必须为 OCkk, 实际形状 {kernels.shape}")
    if kernels.shape[1] != input.shape[1]:
        raise ShapeError(
            f"conv2d: 卷积核通道数 {kernels.shape[1]} 与输入通道数 {input.shape[1]} 不一致"
        )


def conv2d_forward(
    input: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """
    二维卷积（互相关）前向，越界输入按 0 处理

    Args:
        input: N×C×H×W 输入
        kernels: O×C×k×k 卷积核
        bias: 长度 O 的偏置
        stride: 步长
        padding: 零填充宽度

    Returns:
        N×O×H'×W' 输出
    """
    input, kernels, bias = as_tensor(input), as_tensor(kernels), as_tensor(bias)
    _check_conv_shapes(input, kernels)
    if bias.shape != (kernels.shape[0],):
        raise ShapeError(f"conv2d: 偏置形状 {bias.shape} 与输出通道 {kernels.shape[0]} 不一致")

    n, c, h, w = input.shape
    o, _, k, _ = kernels.shape
    out_h = _output_size(h, k, stride, padding, "conv2d")
    out_w = _output_size(w, k, stride, padding, "conv2d")

    xp = np.pad(input, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else input
    cols = _im2col(xp, k, stride, out_h, out_w).reshape(n, c * k * k, out_h * out_w)
    out = np.matmul(kernels.reshape(o, -1), cols) + bias[None, :, None]
    return out.reshape(n, o, out_h, out_w).astype(np.float32, copy=False)


def conv2d_backward(
    input: Tensor, kernels: Tensor, stride: int, padding: int, d_output: Tensor
) -> LayerGrads:
    """
    二维卷积反向

    Returns:
        d_input 以及 [d_kernels, d_bias]
    """
    input, kernels, d_output = as_tensor(input), as_tensor(kernels), as_tensor(d_output)
    _check_conv_shapes(input, kernels)

    n, c, h, w = input.shape
    o, _, k, _ = kernels.shape
    out_h = _output_size(h, k, stride, padding, "conv2d")
    out_w = _output_size(w, k, stride, padding, "conv2d")
    if d_output.shape != (n, o, out_h, out_w):
        raise ShapeError(f"conv2d: d_output 形状 {d_output.shape} 应为 {(n, o, out_h, out_w)}")

    xp = np.pad(input, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else input
    cols = _im2col(xp, k, stride, out_h, out_w).reshape(n, c * k * k, out_h * out_w)
    d_out = d_output.reshape(n, o, out_h * out_w)

    d_kernels = np.tensordot(d_out, cols, axes=([0, 2], [0, 2])).reshape(kernels.shape)
    d_bias = d_out.sum(axis=(0, 2))
    d_cols = np.matmul(kernels.reshape(o, -1).T, d_out).reshape(n, c, k, k, out_h, out_w)
    dxp = _col2im(d_cols, xp.shape, k, stride)
    d_input = dxp[:, :, padding : padding + h, padding : padding + w]

    return LayerGrads(
        d_input=np.ascontiguousarray(d_input, dtype=np.float32),
        d_params=[d_kernels.astype(np.float32), d_bias.astype(np.float32)],
    )


def maxpool2d_forward(input: Tensor, window: int, stride: int) -> Tuple[Tensor, PoolIndex]:
    """
    二维最大池化前向，并列最大值取窗口内行优先扫描的第一个

    Args:
        input: N×C×H×W 输入
        window: 窗口边长
        stride: 步长

    Returns:
        (池化输出, 胜者索引表)
    """
    input = as_tensor(input)
    if input.ndim != 4:
        raise ShapeError(f"maxpool2d: 输入必须为 NCHW, 实际形状 {input.shape}")
    n, c, h, w = input.shape
    out_h = _output_size(h, window, stride, 0, "maxpool2d")
    out_w = _output_size(w, window, stride, 0, "maxpool2d")

    windows = np.empty((window * window, n, c, out_h, out_w), dtype=np.float32)
    for u in range(window):
        for v in range(window):
            windows[u * window + v] = input[
                :, :, u : u + stride * (out_h - 1) + 1 : stride, v : v + stride * (out_w - 1) + 1 : stride
            ]
    winner = np.argmax(windows, axis=0)
    out = np.take_along_axis(windows, winner[None], axis=0)[0]

    rows = np.arange(out_h)[:, None] * stride + winner // window
    cols = np.arange(out_w)[None, :] * stride + winner % window
    base = (np.arange(n)[:, None, None, None] * c + np.arange(c)[None, :, None, None]) * h
    flat = (base + rows) * w + cols
    return out, PoolIndex(indices=flat.astype(np.int64), input_shape=input.shape)


def maxpool2d_backward(index: PoolIndex, d_output: Tensor) -> Tensor:
    """将每个输出梯度路由回其胜者位置，其余位置为 0"""
    d_output = as_tensor(d_output)
    if d_output.shape != index.indices.shape:
        raise ShapeError(
            f"maxpool2d: d_output 形状 {d_output.shape} 与索引表 {index.indices.shape} 不一致"
        )
    size = int(np.prod(index.input_shape))
    routed = np.bincount(
        index.indices.ravel(), weights=d_output.ravel().astype(np.float64), minlength=size
    )
    return routed.astype(np.float32).reshape(index.input_shape)


def dense_forward(input: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """全连接前向：N×F · F×U + U"""
    input, weights, bias = as_tensor(input), as_tensor(weights), as_tensor(bias)
    if input.ndim != 2 or weights.ndim != 2 or input.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense: 输入 {input.shape} 与权重 {weights.shape} 内维不一致")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: 偏置形状 {bias.shape} 应为 {(weights.shape[1],)}")
    return (input @ weights + bias).astype(np.float32, copy=False)


def dense_backward(input: Tensor, weights: Tensor, d_output: Tensor) -> LayerGrads:
    """全连接反向，返回 d_input 以及 [d_weights, d_bias]"""
    input, weights, d_output = as_tensor(input), as_tensor(weights), as_tensor(d_output)
    if d_output.shape != (input.shape[0], weights.shape[1]):
        raise ShapeError(
            f"dense: d_output 形状 {d_output.shape} 应为 {(input.shape[0], weights.shape[1])}"
        )
    return LayerGrads(
        d_input=(d_output @ weights.T).astype(np.float32, copy=False),
        d_params=[(input.T @ d_output).astype(np.float32, copy=False), d_output.sum(axis=0)],
    )


def relu_forward(input: Tensor) -> Tensor:
    return np.maximum(as_tensor(input), np.float32(0))


def relu_backward(input: Tensor, d_output: Tensor) -> Tensor:
    """输入 > 0 处透传梯度，≤ 0 处为 0（0 点次梯度取 0）"""
    input, d_output = as_tensor(input), as_tensor(d_output)
    if input.shape != d_output.shape:
        raise ShapeError(f"relu: 输入 {input.shape} 与 d_output {d_output.shape} 不一致")
    return np.where(input > 0, d_output, np.float32(0))


def flatten_forward(input: Tensor) -> Tensor:
    input = as_tensor(input)
    return input.reshape(input.shape[0], -1)


def flatten_backward(d_output: Tensor, input_shape: Sequence[int]) -> Tensor:
    return as_tensor(d_output).reshape(tuple(input_shape))


def softmax(logits: Tensor) -> Tensor:
    """
    按行 softmax（先减去行最大值保证数值稳定）

    Args:
        logits: N×K

    Returns:
        N×K 概率，每行和为 1
    """
    logits = as_tensor(logits)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"softmax: 需要 N×K (K ≥ 2) 输入, 实际 {logits.shape}")
    if np.isnan(logits).any():
        raise NumericError("softmax: logits 中含有 NaN")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return (exp / exp.sum(axis=1, keepdims=True)).astype(np.float32, copy=False)


def cross_entropy(probs: Tensor, labels) -> Tuple[float, Tensor]:
    """
    交叉熵损失，以及与 softmax 融合后的 logits 梯度

    Args:
        probs: softmax 输出，N×K
        labels: 长度 N 的整数标签

    Returns:
        (平均损失, d_logits = (probs - onehot) / N)
    """
    probs = as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = probs.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: 标签数量 {labels.shape} 与样本数 {n} 不一致")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ShapeError(f"cross_entropy: 标签超出范围 [0, {k})")

    picked = probs[np.arange(n), labels].astype(np.float64)
    loss = float(-np.mean(np.log(np.maximum(picked, LOG_CLAMP))))
    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= np.float32(n)
    return loss, d_logits


def sgd_step(
    params: Sequence[Tensor],
    grads: Sequence[Tensor],
    velocity: Sequence[Tensor],
    lr: float,
    momentum: float,
    weight_decay: float,
) -> Tuple[List[Tensor], List[Tensor]]:
    """
    动量 SGD：v ← momentum·v − lr·(g + weight_decay·p)；p ← p + v

    Returns:
        (新参数列表, 新速度列表)，入参不被修改
    """
    if not (len(params) == len(grads) == len(velocity)):
        raise ShapeError("sgd_step: params / grads / velocity 数量不一致")
    lr32, mom32, wd32 = np.float32(lr), np.float32(momentum), np.float32(weight_decay)
    new_params: List[Tensor] = []
    new_velocity: List[Tensor] = []
    for p, g, v in zip(params, grads, velocity):
        if not (p.shape == g.shape == v.shape):
            raise ShapeError(f"sgd_step: 形状不一致 p={p.shape} g={g.shape} v={v.shape}")
        v_next = (mom32 * v - lr32 * (g + wd32 * p)).astype(np.float32, copy=False)
        new_velocity.append(v_next)
        new_params.append((p + v_next).astype(np.float32, copy=False))
    return new_params, new_velocity
