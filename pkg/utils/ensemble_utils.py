'''
Description  : 基础模型输出的融合：EnA（平均）、EnM（线性元学习器）、EnM2（MLP 元学习器）、EnT（传统学习器平均）
'''

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from utils.checkpoint_utils import read_dgck, write_dgck
from utils.errors import FormatError, ShapeError, TrainingError
from utils.tensor_utils import (
    Tensor,
    cross_entropy,
    dense_backward,
    dense_forward,
    relu_backward,
    relu_forward,
    sgd_step,
    softmax,
)

logger = logging.getLogger(__name__)

META_KINDS = ("linear", "mlp")
ROW_SUM_TOLERANCE = 1e-5


@dataclass
class BaseOutputs:
    """
    N 个基础模型在同一批样本上的概率输出

    Args:
        probs: 模型数×样本数×K
        model_ids: 每个模型的编号（堆叠时按升序排列）
    """

    probs: np.ndarray
    model_ids: List[int] = field(default_factory=list)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float32)
        if self.probs.ndim != 3 or self.probs.shape[0] < 1:
            raise ShapeError(f"BaseOutputs 需要 模型数×样本数×K 且至少一个模型, 实际 {self.probs.shape}")
        if not self.model_ids:
            self.model_ids = list(range(self.probs.shape[0]))
        self.model_ids = [int(i) for i in self.model_ids]
        if len(self.model_ids) != self.probs.shape[0] or len(set(self.model_ids)) != len(self.model_ids):
            raise ShapeError(f"model_ids {self.model_ids} 与模型数 {self.probs.shape[0]} 不匹配")
        if self.probs.size and np.abs(self.probs.sum(axis=2) - 1.0).max() > ROW_SUM_TOLERANCE:
            raise ShapeError("BaseOutputs 中存在行和不为 1 的概率")

    @property
    def n_models(self) -> int:
        return int(self.probs.shape[0])

    @property
    def n_samples(self) -> int:
        return int(self.probs.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.probs.shape[2])

    @classmethod
    def from_list(cls, probs: Sequence[np.ndarray], model_ids: Optional[List[int]] = None) -> "BaseOutputs":
        shapes = {np.shape(p) for p in probs}
        if len(shapes) != 1:
            raise ShapeError(f"各模型输出形状不一致: {sorted(shapes)}")
        return cls(np.stack(probs), list(model_ids or []))


def concat_samples(parts: Sequence[BaseOutputs]) -> BaseOutputs:
    """沿样本维拼接（模型编号必须一致）"""
    ids = parts[0].model_ids
    if any(p.model_ids != ids for p in parts):
        raise ShapeError("拼接的 BaseOutputs 模型编号不一致")
    return BaseOutputs(np.concatenate([p.probs for p in parts], axis=1), ids)


def ensemble_average(outputs: BaseOutputs) -> np.ndarray:
    """EnA：逐样本对所有模型取算术平均"""
    return outputs.probs.astype(np.float64).mean(axis=0).astype(np.float32)


def stack_outputs(outputs: BaseOutputs) -> np.ndarray:
    """堆叠为 样本数×(模型数·K)：模型按编号升序，每个模型的 K 个类别连续排列"""
    order = np.argsort(outputs.model_ids, kind="stable")
    return np.ascontiguousarray(
        outputs.probs[order].transpose(1, 0, 2).reshape(outputs.n_samples, -1), dtype=np.float32
    )


def ensemble_traditional(rf_probs: np.ndarray, svm_probs: np.ndarray, lr_probs: np.ndarray) -> np.ndarray:
    """EnT：随机森林、SVM、逻辑回归三者的等权平均"""
    return ensemble_average(BaseOutputs.from_list([rf_probs, svm_probs, lr_probs], [0, 1, 2]))


# region 元学习器


@dataclass
class MetaConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    hidden_units: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise TrainingError(f"元学习器 epochs 不能为负, 实际 {self.epochs}")
        if self.batch_size < 1 or self.hidden_units < 1:
            raise TrainingError("元学习器 batch_size / hidden_units 必须 ≥ 1")


@dataclass
class MetaModel:
    """
    元学习器：输入为 模型数·K 维堆叠概率，输出 K 类

    Args:
        kind: linear（EnM）| mlp（EnM2）
        params: linear 为 w1/b1；mlp 为 w1/b1（隐藏层）与 w2/b2（输出层）
    """

    kind: str
    params: Dict[str, Tensor]
    n_models: int
    num_classes: int
    hidden_units: int = 0

    def __post_init__(self):
        if self.kind not in META_KINDS:
            raise ShapeError(f"未知的元学习器类型: {self.kind}")
        expected = _param_shapes(self.kind, self.n_models * self.num_classes, self.num_classes, self.hidden_units)
        actual = {name: tuple(value.shape) for name, value in self.params.items()}
        if actual != expected:
            raise ShapeError(f"元学习器参数形状 {actual} 应为 {expected}")

    @property
    def input_width(self) -> int:
        return self.n_models * self.num_classes


def _param_shapes(kind: str, width: int, k: int, hidden: int) -> Dict[str, tuple]:
    if kind == "linear":
        return {"w1": (width, k), "b1": (k,)}
    return {"w1": (width, hidden), "b1": (hidden,), "w2": (hidden, k), "b2": (k,)}


def _init_meta(kind: str, n_models: int, k: int, hidden: int, seed: int) -> MetaModel:
    rng = np.random.default_rng(seed)
    params: Dict[str, Tensor] = {}
    for name, shape in _param_shapes(kind, n_models * k, k, hidden).items():
        if name.startswith("w"):
            bound = math.sqrt(6.0 / shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        else:
            params[name] = np.zeros(shape, dtype=np.float32)
    return MetaModel(kind, params, n_models, k, hidden if kind == "mlp" else 0)


def _meta_forward(meta: MetaModel, x: Tensor):
    p = meta.params
    if meta.kind == "linear":
        return dense_forward(x, p["w1"], p["b1"]), None
    pre = dense_forward(x, p["w1"], p["b1"])
    hidden = relu_forward(pre)
    return dense_forward(hidden, p["w2"], p["b2"]), (pre, hidden)


def _meta_backward(meta: MetaModel, x: Tensor, cache, d_logits: Tensor) -> Dict[str, Tensor]:
    p = meta.params
    if meta.kind == "linear":
        g = dense_backward(x, p["w1"], d_logits)
        return {"w1": g.d_params[0], "b1": g.d_params[1]}
    pre, hidden = cache
    g2 = dense_backward(hidden, p["w2"], d_logits)
    g1 = dense_backward(x, p["w1"], relu_backward(pre, g2.d_input))
    return {"w1": g1.d_params[0], "b1": g1.d_params[1], "w2": g2.d_params[0], "b2": g2.d_params[1]}


def _train_meta(kind: str, outputs: BaseOutputs, labels: np.ndarray, config: MetaConfig) -> MetaModel:
    tag = "[EnM]" if kind == "linear" else "[EnM2]"
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != outputs.n_samples:
        raise ShapeError(f"{tag} 标签数 {labels.shape[0]} 与样本数 {outputs.n_samples} 不一致")
    if outputs.n_samples == 0:
        raise TrainingError(f"{tag} 元训练数据为空")

    meta = _init_meta(kind, outputs.n_models, outputs.num_classes, config.hidden_units, config.seed)
    x_all = stack_outputs(outputs)
    rng = np.random.default_rng(config.seed)
    names = list(meta.params)
    current = [meta.params[name] for name in names]
    velocity = [np.zeros_like(p) for p in current]

    for epoch in range(config.epochs):
        order = rng.permutation(outputs.n_samples)
        loss_sum, correct = 0.0, 0
        for start in range(0, outputs.n_samples, config.batch_size):
            idx = order[start : start + config.batch_size]
            meta.params = dict(zip(names, current))
            logits, cache = _meta_forward(meta, x_all[idx])
            probs = softmax(logits)
            loss, d_logits = cross_entropy(probs, labels[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"{tag} 损失为 NaN/Inf: epoch {epoch + 1}, lr={config.lr}")
            grads = _meta_backward(meta, x_all[idx], cache, d_logits)
            current, velocity = sgd_step(
                current, [grads[name] for name in names], velocity,
                config.lr, config.momentum, config.weight_decay,
            )
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == labels[idx]))
        logger.info(
            f"{tag} epoch {epoch + 1}/{config.epochs} loss={loss_sum / outputs.n_samples:.4f} "
            f"train_acc={correct / outputs.n_samples:.4f}"
        )

    meta.params = dict(zip(names, current))
    return meta


def train_meta_linear(outputs: BaseOutputs, labels: np.ndarray, config: MetaConfig) -> MetaModel:
    """
    EnM：在堆叠的基础模型概率上训练单层仿射 + softmax（交叉熵、动量 SGD），基础模型参数冻结

    Args:
        outputs: 元训练样本上的基础模型输出
        labels: 对应标签
        config: 元学习器配置

    Returns:
        训练后的元学习器
    """
    return _train_meta("linear", outputs, labels, config)


def train_meta_mlp(outputs: BaseOutputs, labels: np.ndarray, config: MetaConfig) -> MetaModel:
    """EnM2：一个 ReLU 隐藏层（默认 64 单元）的 MLP，训练方式同 EnM"""
    return _train_meta("mlp", outputs, labels, config)


def meta_predict(meta: MetaModel, outputs: BaseOutputs) -> np.ndarray:
    x = stack_outputs(outputs)
    if x.shape[1] != meta.input_width:
        raise ShapeError(f"堆叠输入宽度 {x.shape[1]} 与元学习器输入宽度 {meta.input_width} 不一致")
    logits, _ = _meta_forward(meta, x)
    return softmax(logits)


def replicate_model_meta(n_models: int, num_classes: int, index: int, scale: float = 50.0) -> MetaModel:
    """解析构造的线性元学习器：只把第 index 个模型的概率乘以 scale 送入 softmax"""
    if not 0 <= index < n_models:
        raise ShapeError(f"index {index} 超出模型数 {n_models}")
    w = np.zeros((n_models * num_classes, num_classes), dtype=np.float32)
    w[index * num_classes : (index + 1) * num_classes] = np.float32(scale) * np.eye(num_classes, dtype=np.float32)
    return MetaModel("linear", {"w1": w, "b1": np.zeros(num_classes, dtype=np.float32)}, n_models, num_classes)


def save_meta(meta: MetaModel, path: str) -> None:
    header: Dict[str, Any] = {
        "kind": "meta",
        "meta_kind": meta.kind,
        "n_models": meta.n_models,
        "num_classes": meta.num_classes,
        "hidden_units": meta.hidden_units,
    }
    write_dgck(path, header, meta.params)


def load_meta(path: str) -> MetaModel:
    header, tensors = read_dgck(path)
    if header.get("kind") != "meta":
        raise FormatError(f"检查点类型不是 meta: {header.get('kind')}")
    try:
        return MetaModel(
            header["meta_kind"], tensors, int(header["n_models"]),
            int(header["num_classes"]), int(header["hidden_units"]),
        )
    except ShapeError as e:
        raise FormatError(f"元学习器检查点损坏: {e}") from e


# endregion
