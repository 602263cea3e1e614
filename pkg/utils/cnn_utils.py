'''
Description  : 基础 CNN / HCNN 结构构建、训练、预测与检查点
'''

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.augment_utils import Augmentation, augment_batch
from utils.checkpoint_utils import read_dgck, write_dgck
from utils.dataset_utils import LabeledImageSet, to_float
from utils.errors import FormatError, ShapeError, TrainingError
from utils.tensor_utils import (
    Tensor,
    as_tensor,
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

logger = logging.getLogger(__name__)

# 参数名 → 张量（按层顺序）
ModelParams = Dict[str, Tensor]

HCNN_TOLERANCE = 0.05
WIDTH_GRID_STEP = 0.01


@dataclass
class CnnSpec:
    """
    网络结构描述

    Args:
        input_shape: (C, H, W)
        num_classes: 类别数 K
        layers: 有序层描述，如 {"type": "conv", "out_channels": 32, "k": 3, "stride": 1, "pad": 1}
        width_scale: 卷积输出通道与隐藏全连接单元的宽度倍数（向上取整）
    """

    input_shape: Tuple[int, int, int]
    num_classes: int
    layers: List[Dict[str, Any]]
    width_scale: float = 1.0

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ShapeError(f"input_shape 必须为正的 (C, H, W), 实际 {self.input_shape}")
        if self.width_scale < 1:
            raise ShapeError(f"width_scale 必须 ≥ 1, 实际 {self.width_scale}")
        dense = [layer for layer in self.layers if layer["type"] == "dense"]
        if not dense or self.layers[-1]["type"] != "dense" or dense[-1]["units"] != self.num_classes:
            raise ShapeError(f"最后一层必须是 {self.num_classes} 个单元的 dense 层")
        # 静态检查形状链
        layer_plan(self)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [dict(layer) for layer in self.layers],
            "width_scale": self.width_scale,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "CnnSpec":
        return cls(
            input_shape=tuple(d["input_shape"]),
            num_classes=int(d["num_classes"]),
            layers=[dict(layer) for layer in d["layers"]],
            width_scale=float(d.get("width_scale", 1.0)),
        )


@dataclass
class LayerPlan:
    """单层的静态形状信息（不含 batch 维）"""

    index: int
    layer: Dict[str, Any]
    input_shape: Tuple[int, ...]
    output_shape: Tuple[int, ...]
    param_shapes: Dict[str, Tuple[int, ...]] = field(default_factory=dict)


@dataclass
class TrainConfig:
    """单个模型的训练配置"""

    epochs: int = 3
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    augmentation_ref: str = ""

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainingError(f"epochs 必须 ≥ 1, 实际 {self.epochs}")
        if self.batch_size < 1:
            raise TrainingError(f"batch_size 必须 ≥ 1, 实际 {self.batch_size}")
        if self.lr < 0:
            raise TrainingError(f"lr 不能为负, 实际 {self.lr}")


@dataclass
class TrainHistory:
    """每个完成的 epoch 一条记录"""

    train_loss: List[float] = field(default_factory=list)
    train_accuracy: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "train_loss": self.train_loss,
            "train_accuracy": self.train_accuracy,
            "val_accuracy": self.val_accuracy,
            "best_epoch": self.best_epoch,
        }


def _scaled(units: int, scale: float) -> int:
    # 先舍入再取整，避免 1.1 * 10 = 11.000000000000002 这类误差
    return int(math.ceil(round(units * scale, 6)))


def layer_plan(spec: CnnSpec) -> List[LayerPlan]:
    """
    计算每层的输入/输出形状及参数形状

    Args:
        spec: 网络结构

    Returns:
        各层的 LayerPlan
    """
    shape: Tuple[int, ...] = tuple(spec.input_shape)
    last_dense = max(i for i, layer in enumerate(spec.layers) if layer["type"] == "dense")
    plans: List[LayerPlan] = []

    for i, layer in enumerate(spec.layers):
        kind = layer["type"]
        params: Dict[str, Tuple[int, ...]] = {}
        if kind == "conv":
            if len(shape) != 3:
                raise ShapeError(f"第 {i} 层 conv 需要 CHW 输入, 实际 {shape}")
            c, h, w = shape
            k, stride, pad = int(layer["k"]), int(layer.get("stride", 1)), int(layer.get("pad", 0))
            out_c = _scaled(int(layer["out_channels"]), spec.width_scale)
            spans = (h + 2 * pad - k, w + 2 * pad - k)
            if min(spans) < 0 or spans[0] % stride or spans[1] % stride:
                raise ShapeError(f"第 {i} 层 conv 输出尺寸非整数: 输入 {shape}")
            out = (out_c, spans[0] // stride + 1, spans[1] // stride + 1)
            params = {f"layer{i}.weight": (out_c, c, k, k), f"layer{i}.bias": (out_c,)}
        elif kind == "maxpool":
            if len(shape) != 3:
                raise ShapeError(f"第 {i} 层 maxpool 需要 CHW 输入, 实际 {shape}")
            c, h, w = shape
            window, stride = int(layer["window"]), int(layer["stride"])
            spans = (h - window, w - window)
            if min(spans) < 0 or spans[0] % stride or spans[1] % stride:
                raise ShapeError(f"第 {i} 层 maxpool 输出尺寸非整数: 输入 {shape}")
            out = (c, spans[0] // stride + 1, spans[1] // stride + 1)
        elif kind == "relu":
            out = shape
        elif kind == "flatten":
            out = (int(np.prod(shape)),)
        elif kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"第 {i} 层 dense 之前需要 flatten, 实际输入 {shape}")
            units = int(layer["units"])
            if i != last_dense:
                units = _scaled(units, spec.width_scale)
            out = (units,)
            params = {f"layer{i}.weight": (shape[0], units), f"layer{i}.bias": (units,)}
        else:
            raise ShapeError(f"未知层类型: {kind}")

        plans.append(LayerPlan(i, layer, shape, out, params))
        shape = out

    return plans


def build_base_cnn(input_shape: Sequence[int], num_classes: int) -> CnnSpec:
    """
    基础 CNN：conv32-relu-conv32-relu-pool-conv64-relu-pool-flatten-dense128-relu-dense(K)

    Args:
        input_shape: (C, H, W)，H、W ≥ 8
        num_classes: 类别数

    Returns:
        网络结构
    """
    c, h, w = (int(v) for v in input_shape)
    if h < 8 or w < 8:
        raise ShapeError(f"输入 {h}×{w} 太小，无法进行两次 2× 池化（需要 ≥ 8×8）")
    layers = [
        {"type": "conv", "out_channels": 32, "k": 3, "stride": 1, "pad": 1},
        {"type": "relu"},
        {"type": "conv", "out_channels": 32, "k": 3, "stride": 1, "pad": 1},
        {"type": "relu"},
        {"type": "maxpool", "window": 2, "stride": 2},
        {"type": "conv", "out_channels": 64, "k": 3, "stride": 1, "pad": 1},
        {"type": "relu"},
        {"type": "maxpool", "window": 2, "stride": 2},
        {"type": "flatten"},
        {"type": "dense", "units": 128},
        {"type": "relu"},
        {"type": "dense", "units": num_classes},
    ]
    return CnnSpec(input_shape=(c, h, w), num_classes=num_classes, layers=layers)


def count_params(spec: CnnSpec) -> int:
    """可训练参数（权重 + 偏置）总数"""
    return sum(
        int(np.prod(shape)) for plan in layer_plan(spec) for shape in plan.param_shapes.values()
    )


def build_hcnn(input_shape: Sequence[int], num_classes: int, target_param_count: int) -> CnnSpec:
    """
    构建与目标参数量匹配（±5%）的大 CNN：在步长 0.01 的宽度网格上二分查找

    Args:
        input_shape: (C, H, W)
        num_classes: 类别数
        target_param_count: 目标参数量（通常为所有基础模型参数量之和）

    Returns:
        width_scale 调整后的网络结构
    """
    base = build_base_cnn(input_shape, num_classes)
    base_count = count_params(base)
    if target_param_count < base_count:
        raise ShapeError(f"目标参数量 {target_param_count} 小于基础模型参数量 {base_count}")

    def spec_at(i: int) -> CnnSpec:
        return CnnSpec(
            input_shape=base.input_shape,
            num_classes=num_classes,
            layers=base.layers,
            width_scale=round(1.0 + i * WIDTH_GRID_STEP, 2),
        )

    counts: Dict[int, int] = {0: base_count}

    def count_at(i: int) -> int:
        if i not in counts:
            counts[i] = count_params(spec_at(i))
        return counts[i]

    hi = 1
    while count_at(hi) < target_param_count:
        hi *= 2
    lo = 0
    while lo < hi:
        mid = (lo + hi) // 2
        if count_at(mid) >= target_param_count:
            hi = mid
        else:
            lo = mid + 1

    candidates = [i for i in (lo - 1, lo) if i >= 0]
    best = min(candidates, key=lambda i: (abs(count_at(i) - target_param_count), i))
    if abs(count_at(best) - target_param_count) > HCNN_TOLERANCE * target_param_count:
        raise ShapeError(
            f"无法在 ±{HCNN_TOLERANCE:.0%} 内匹配目标参数量 {target_param_count}（最接近 {count_at(best)}）"
        )
    return spec_at(best)


def init_params(spec: CnnSpec, seed: int) -> ModelParams:
    """He-uniform 初始化权重（界 √(6/fan_in)），偏置为 0"""
    rng = np.random.default_rng(seed)
    params: ModelParams = {}
    for plan in layer_plan(spec):
        for name, shape in plan.param_shapes.items():
            if name.endswith(".weight"):
                fan_in = int(np.prod(shape[1:])) if plan.layer["type"] == "conv" else shape[0]
                bound = math.sqrt(6.0 / fan_in)
                params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
            else:
                params[name] = np.zeros(shape, dtype=np.float32)
    return params


def forward(spec: CnnSpec, params: ModelParams, images: Tensor) -> Tuple[Tensor, List[Any]]:
    """
    整网前向

    Returns:
        (logits, 各层反向所需缓存)
    """
    x = as_tensor(images)
    caches: List[Any] = []
    for i, layer in enumerate(spec.layers):
        kind = layer["type"]
        if kind == "conv":
            caches.append(x)
            x = conv2d_forward(
                x, params[f"layer{i}.weight"], params[f"layer{i}.bias"],
                int(layer.get("stride", 1)), int(layer.get("pad", 0)),
            )
        elif kind == "relu":
            caches.append(x)
            x = relu_forward(x)
        elif kind == "maxpool":
            x, index = maxpool2d_forward(x, int(layer["window"]), int(layer["stride"]))
            caches.append(index)
        elif kind == "flatten":
            caches.append(x.shape)
            x = flatten_forward(x)
        elif kind == "dense":
            caches.append(x)
            x = dense_forward(x, params[f"layer{i}.weight"], params[f"layer{i}.bias"])
    return x, caches


def backward(
    spec: CnnSpec, params: ModelParams, caches: List[Any], d_logits: Tensor
) -> ModelParams:
    """整网反向，返回与 params 同名同形的梯度"""
    grads: ModelParams = {}
    d = as_tensor(d_logits)
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, cache = spec.layers[i], caches[i]
        kind = layer["type"]
        if kind == "conv":
            g = conv2d_backward(
                cache, params[f"layer{i}.weight"],
                int(layer.get("stride", 1)), int(layer.get("pad", 0)), d,
            )
            grads[f"layer{i}.weight"], grads[f"layer{i}.bias"] = g.d_params
            d = g.d_input
        elif kind == "relu":
            d = relu_backward(cache, d)
        elif kind == "maxpool":
            d = maxpool2d_backward(cache, d)
        elif kind == "flatten":
            d = flatten_backward(d, cache)
        elif kind == "dense":
            g = dense_backward(cache, params[f"layer{i}.weight"], d)
            grads[f"layer{i}.weight"], grads[f"layer{i}.bias"] = g.d_params
            d = g.d_input
    return {name: grads[name] for name in params}


def _as_images(spec: CnnSpec, images) -> Tensor:
    x = to_float(images) if isinstance(images, LabeledImageSet) else as_tensor(images)
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(spec.input_shape):
        raise ShapeError(f"输入形状 {x.shape} 与网络输入 {spec.input_shape} 不一致")
    return x


def predict_proba(spec: CnnSpec, params: ModelParams, images, batch_size: int = 256) -> Tensor:
    """
    预测类别概率

    Args:
        spec: 网络结构
        params: 参数
        images: N×C×H×W 的 [0,1] 浮点张量，或 LabeledImageSet

    Returns:
        N×K 概率
    """
    x = _as_images(spec, images)
    outputs = [
        softmax(forward(spec, params, x[start : start + batch_size])[0])
        for start in range(0, x.shape[0], batch_size)
    ]
    if not outputs:
        return np.zeros((0, spec.num_classes), dtype=np.float32)
    return np.concatenate(outputs, axis=0)


def evaluate(spec: CnnSpec, params: ModelParams, dataset: LabeledImageSet) -> float:
    """准确率：argmax（并列取最小类别号）等于标签的样本比例"""
    if dataset is None or len(dataset) == 0:
        raise ShapeError("evaluate: 数据集为空")
    predictions = np.argmax(predict_proba(spec, params, dataset), axis=1)
    return float(np.mean(predictions == dataset.labels.astype(np.int64)))


def train(
    spec: CnnSpec,
    params: ModelParams,
    train_set: LabeledImageSet,
    val_set: Optional[LabeledImageSet],
    config: TrainConfig,
    augmentations: Optional[Sequence[Augmentation]] = None,
) -> Tuple[ModelParams, TrainHistory]:
    """
    小批量动量 SGD 训练，每个 epoch 用带种子的 RNG 打乱数据并即时增强；
    返回验证准确率最高的一组参数（早选择而非早停）

    Args:
        spec: 网络结构
        params: 初始参数
        train_set: S_train
        val_set: S_val（为空时按训练准确率选择）
        config: 训练配置
        augmentations: 该模型固定使用的增强子集

    Returns:
        (最佳参数, 训练历史)
    """
    if train_set is None or len(train_set) == 0:
        raise TrainingError("训练集为空")
    if int(train_set.labels.max()) >= spec.num_classes:
        raise TrainingError(f"标签超出 [0, {spec.num_classes}) 范围")

    tag = f"[{config.augmentation_ref}] " if config.augmentation_ref else ""
    augmentations = list(augmentations or [])
    rng = np.random.default_rng(config.seed)
    x_all = _as_images(spec, train_set)
    y_all = train_set.labels.astype(np.int64)
    n = x_all.shape[0]

    names = list(params)
    current = [as_tensor(params[name]) for name in names]
    velocity = [np.zeros_like(p) for p in current]
    best = dict(zip(names, current))
    best_score = -1.0
    history = TrainHistory()

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            xb = x_all[idx]
            if augmentations:
                xb = augment_batch(xb, augmentations, rng)
            model = dict(zip(names, current))
            logits, caches = forward(spec, model, xb)
            if not np.isfinite(logits).all():
                raise TrainingError(f"{tag}logits 出现 NaN/Inf: epoch {epoch + 1} batch {b + 1}, lr={config.lr}")
            probs = softmax(logits)
            loss, d_logits = cross_entropy(probs, y_all[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"{tag}损失为 NaN/Inf: epoch {epoch + 1} batch {b + 1}, lr={config.lr}")
            grads = backward(spec, model, caches, d_logits)
            current, velocity = sgd_step(
                current, [grads[name] for name in names], velocity,
                config.lr, config.momentum, config.weight_decay,
            )
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == y_all[idx]))

        model = dict(zip(names, current))
        train_acc = correct / n
        val_acc = evaluate(spec, model, val_set) if val_set is not None and len(val_set) else train_acc
        history.train_loss.append(loss_sum / n)
        history.train_accuracy.append(train_acc)
        history.val_accuracy.append(val_acc)
        if val_acc > best_score:
            best_score, best, history.best_epoch = val_acc, model, epoch

        logger.info(
            f"{tag}epoch {epoch + 1}/{config.epochs} loss={loss_sum / n:.4f} "
            f"train_acc={train_acc:.4f} val_acc={val_acc:.4f}"
        )

    return best, history


def fit_model(
    spec: CnnSpec,
    train_set: LabeledImageSet,
    val_set: Optional[LabeledImageSet],
    config: TrainConfig,
    augmentations: Optional[Sequence[Augmentation]] = None,
) -> Tuple[ModelParams, TrainHistory]:
    """用 config.seed 初始化并训练一个模型（并行训练时每个进程调用一次）"""
    return train(spec, init_params(spec, config.seed), train_set, val_set, config, augmentations)


def save_checkpoint(spec: CnnSpec, params: ModelParams, path: str) -> None:
    """保存网络结构与参数到 DGCK 文件"""
    write_dgck(path, {"kind": "cnn", "spec": spec.to_dict()}, params)


def load_checkpoint(path: str) -> Tuple[CnnSpec, ModelParams]:
    """
    读取 DGCK 网络检查点并校验参数名与形状

    Returns:
        (网络结构, 参数)
    """
    header, tensors = read_dgck(path)
    if header.get("kind") != "cnn":
        raise FormatError(f"检查点类型不是 cnn: {header.get('kind')}")
    spec = CnnSpec.from_dict(header["spec"])
    expected = {
        name: shape for plan in layer_plan(spec) for name, shape in plan.param_shapes.items()
    }
    if list(expected) != list(tensors):
        raise FormatError(f"检查点参数名与网络结构不一致: {list(tensors)}")
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != tuple(shape):
            raise FormatError(f"参数 {name} 形状 {tensors[name].shape} 应为 {shape}")
    return spec, tensors
