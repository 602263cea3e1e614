'''
Description  : 实验配置校验、预处理规则解析与源域 / 目标域数据准备
'''

import logging
import os
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union

from utils.array_utils import filter_valid_strings
from utils.augment_utils import Augmentation, default_pool
from utils.cnn_utils import TrainConfig
from utils.dataset_utils import (
    CIFAR10_STL10_MAPPING,
    DomainPair,
    LabeledImageSet,
    SplitSpec,
    describe,
    intersect_labels,
    load_cifar10_binary,
    load_dgim,
    load_idx,
    load_stl10_binary,
    resize,
    subsample,
    to_grayscale,
)
from utils.errors import ConfigError, TrainingError
from utils.merge_utils import deep_merge
from utils.object_utils import get_property
from utils.patterns import DATASET_ID_PATTERN, NUM_MODELS_PATTERN

logger = logging.getLogger(__name__)

DIGIT_DATASETS = ("mnist", "usps", "svhn")
OBJECT_DATASETS = ("cifar10", "stl10")
# 原始为 3 通道的数字数据集
RGB_DIGIT_DATASETS = ("svhn",)
DATASET_FORMATS = ("idx", "cifar10", "dgim", "stl10")
LEARNER_GROUPS = ("base", "EnA", "EnM", "EnM2", "HCNN", "EnT", "RF", "SVM", "LR")


@dataclass
class DatasetSource:
    """一个数据域的来源：标识、文件格式、文件路径与可选的样本上限"""

    id: str
    format: str
    paths: List[str]
    limit: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not re.fullmatch(DATASET_ID_PATTERN, self.id):
            raise ConfigError(f"未知的数据集: {self.id}")
        if self.format not in DATASET_FORMATS:
            raise ConfigError(f"{self.id}: 不支持的格式 {self.format}, 可选 {DATASET_FORMATS}")
        if not self.paths:
            raise ConfigError(f"{self.id}: 未配置数据文件路径")
        if self.limit is not None and int(self.limit) < 1:
            raise ConfigError(f"{self.id}: limit 必须 ≥ 1")

    def to_dict(self) -> Dict[str, Any]:
        return {"id": self.id, "format": self.format, "paths": list(self.paths), "limit": self.limit}


@dataclass
class ExperimentConfig:
    """
    一次实验的完整配置（由 settings.yaml 默认值与实验 JSON 合并而来）

    Args:
        source: 源域 D^s
        target: 目标域 D^t
        num_models: 基础模型数 N，或 "classes"
        global_seed: 全局种子（划分、增强分配、元学习器、传统学习器）
        model_seeds: 每个基础模型的种子，为空时取 global+1..N
    """

    source: DatasetSource
    target: DatasetSource
    num_models: Union[int, str] = 5
    global_seed: int = 0
    model_seeds: List[int] = field(default_factory=list)
    training: Dict[str, Any] = field(default_factory=dict)
    hcnn_training: Dict[str, Any] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)
    classical: Dict[str, Any] = field(default_factory=dict)
    val_fraction: float = 0.1
    augmentation_pool: List[Augmentation] = field(default_factory=list)
    learners: List[str] = field(default_factory=lambda: list(LEARNER_GROUPS))
    out_dir: str = "results"
    table_name: str = "results"
    save_checkpoints: bool = True
    n_jobs: int = -1
    single_context: bool = False
    raw: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.source.id == self.target.id:
            raise ConfigError(f"源域与目标域不能相同: {self.source.id}")
        if not re.fullmatch(NUM_MODELS_PATTERN, str(self.num_models)):
            raise ConfigError(f"num_models 必须为正整数或 'classes', 实际 {self.num_models}")
        if str(self.num_models) != "classes":
            self.num_models = int(self.num_models)
            if self.model_seeds and len(self.model_seeds) != self.num_models:
                raise ConfigError(f"种子数 {len(self.model_seeds)} 与模型数 {self.num_models} 不一致")
        SplitSpec(self.val_fraction, self.global_seed)
        unknown = [name for name in self.learners if name not in LEARNER_GROUPS]
        if unknown:
            raise ConfigError(f"未知的学习器: {unknown}, 可选 {LEARNER_GROUPS}")
        for section, default_lr in (("training", 0.01), ("meta", 0.05)):
            lr = get_property(getattr(self, section), "lr", default_lr)
            if not float(lr) > 0:
                raise ConfigError(f"{section}.lr 必须 > 0, 实际 {lr}")
        try:
            self.train_config(0)
            self.train_config(0, hcnn=True)
        except TrainingError as e:
            raise ConfigError(f"训练配置非法: {e}") from e

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ExperimentConfig":
        """
        从合并后的配置字典构造并校验

        Args:
            d: settings.yaml 与实验 JSON 合并后的字典

        Returns:
            实验配置
        """
        if not isinstance(d, dict):
            raise ConfigError("实验配置必须是映射")
        try:
            source = _dataset_source(d, "source")
            target = _dataset_source(d, "target")
            pool = [Augmentation.from_dict(a) for a in get_property(d, "augmentation.pool", []) or []]
            return cls(
                source=source,
                target=target,
                num_models=d.get("num_models", 5),
                global_seed=int(get_property(d, "seeds.global", 0)),
                model_seeds=[int(s) for s in get_property(d, "seeds.models", []) or []],
                training=dict(d.get("training") or {}),
                hcnn_training=dict(d.get("hcnn_training") or {}),
                meta=dict(d.get("meta") or {}),
                classical=dict(d.get("classical") or {}),
                val_fraction=float(get_property(d, "split.val_fraction", 0.1)),
                augmentation_pool=pool,
                learners=filter_valid_strings(d.get("learners", list(LEARNER_GROUPS))),
                out_dir=str(get_property(d, "output.out_dir", "results")),
                table_name=str(get_property(d, "output.table_name", "results")),
                save_checkpoints=bool(get_property(d, "output.checkpoints", True)),
                n_jobs=int(get_property(d, "parallel.n_jobs", -1)),
                single_context=bool(d.get("single_context", False)),
                raw=d,
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"实验配置字段错误: {e}") from e

    def with_overrides(
        self, seed: Optional[int] = None, single_context: Optional[bool] = None, out_dir: Optional[str] = None
    ) -> "ExperimentConfig":
        """应用命令行覆盖项：--seed 会重置模型种子为 seed+1..N"""
        overrides: Dict[str, Any] = {}
        if seed is not None:
            overrides["seeds"] = {"global": int(seed), "models": []}
        if single_context is not None and single_context:
            overrides["single_context"] = True
        if out_dir:
            overrides["output"] = {"out_dir": out_dir}
        return ExperimentConfig.from_dict(deep_merge(self.raw, overrides)) if overrides else self

    def resolve_num_models(self, num_classes: int) -> int:
        n = num_classes if self.num_models == "classes" else int(self.num_models)
        if self.model_seeds and len(self.model_seeds) != n:
            raise ConfigError(f"种子数 {len(self.model_seeds)} 与模型数 {n} 不一致")
        return n

    def seeds_for(self, n_models: int) -> List[int]:
        return list(self.model_seeds) if self.model_seeds else [self.global_seed + i + 1 for i in range(n_models)]

    def train_config(self, seed: int, hcnn: bool = False, tag: str = "") -> TrainConfig:
        options = deep_merge(self.training, self.hcnn_training) if hcnn else self.training
        return TrainConfig(
            epochs=int(options.get("epochs", 3)),
            batch_size=int(options.get("batch_size", 64)),
            lr=float(options.get("lr", 0.01)),
            momentum=float(options.get("momentum", 0.9)),
            weight_decay=float(options.get("weight_decay", 5e-4)),
            seed=int(seed),
            augmentation_ref=tag,
        )

    def enabled(self, learner: str) -> bool:
        return learner in self.learners

    @property
    def n_jobs_effective(self) -> int:
        return 1 if self.single_context else self.n_jobs


def _dataset_source(d: Dict[str, Any], key: str) -> DatasetSource:
    spec = d.get(key)
    if not isinstance(spec, dict) or "id" not in spec:
        raise ConfigError(f"缺少 {key}.id")
    dataset_id = str(spec["id"]).lower()
    defaults = get_property(d, f"datasets.{dataset_id}", {}) or {}
    root = str(get_property(d, "datasets.root", "") or "")
    paths = spec.get("paths")
    if not paths:
        paths = [os.path.join(root, p) if root and not os.path.isabs(p) else p for p in defaults.get("paths", [])]
    limit = spec.get("limit")
    return DatasetSource(
        id=dataset_id,
        format=str(spec.get("format") or defaults.get("format", "dgim")),
        paths=[str(p) for p in paths],
        limit=int(limit) if limit is not None else None,
    )


@dataclass
class PreprocessPlan:
    """
    一个源域 / 目标域组合的预处理流水线

    Args:
        size: 统一的边长（USPS 参与时 16，否则 32）
        grayscale: 需要灰度化的数据集
        intersect: 是否需要类别求交（CIFAR10↔STL10）
        num_classes: 求交后的类别数 K
        domain_kind: digits | objects
    """

    size: int
    grayscale: List[str]
    intersect: bool
    num_classes: int
    domain_kind: str
    mapping: Optional[Dict[str, str]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "size": self.size,
            "grayscale": list(self.grayscale),
            "intersect": self.intersect,
            "num_classes": self.num_classes,
            "domain_kind": self.domain_kind,
        }


def resolve_preprocessing(source_id: str, target_id: str) -> PreprocessPlan:
    """
    按数据集组合确定预处理：
    USPS 参与 → 16×16，否则 32×32；SVHN 与 MNIST/USPS 组合 → SVHN 灰度化；
    CIFAR10↔STL10 → 9 个共同类别

    Args:
        source_id: 源域标识
        target_id: 目标域标识

    Returns:
        预处理计划
    """
    ids = (source_id, target_id)
    for dataset_id in ids:
        if dataset_id not in DIGIT_DATASETS + OBJECT_DATASETS:
            raise ConfigError(f"未知的数据集: {dataset_id}")
    if source_id == target_id:
        raise ConfigError(f"源域与目标域不能相同: {source_id}")

    if all(i in DIGIT_DATASETS for i in ids):
        return PreprocessPlan(
            size=16 if "usps" in ids else 32,
            grayscale=[i for i in ids if i in RGB_DIGIT_DATASETS],
            intersect=False,
            num_classes=10,
            domain_kind="digits",
        )
    if all(i in OBJECT_DATASETS for i in ids):
        mapping = CIFAR10_STL10_MAPPING if source_id == "cifar10" else {
            v: k for k, v in CIFAR10_STL10_MAPPING.items()
        }
        return PreprocessPlan(
            size=32, grayscale=[], intersect=True, num_classes=len(mapping),
            domain_kind="objects", mapping=dict(mapping),
        )
    raise ConfigError(f"不支持数字与物体数据集混合: {source_id} → {target_id}")


def load_dataset(source: DatasetSource) -> LabeledImageSet:
    """按格式读取一个数据域"""
    paths = source.paths
    if source.format == "idx":
        if len(paths) != 2:
            raise ConfigError(f"{source.id}: IDX 需要 [images, labels] 两个路径")
        return load_idx(paths[0], paths[1])
    if source.format == "cifar10":
        return load_cifar10_binary(paths)
    if source.format == "stl10":
        if len(paths) != 2:
            raise ConfigError(f"{source.id}: STL10 需要 [images, labels] 两个路径")
        return load_stl10_binary(paths[0], paths[1])
    return load_dgim(paths[0])


def _preprocess(image_set: LabeledImageSet, dataset_id: str, plan: PreprocessPlan) -> LabeledImageSet:
    if dataset_id in plan.grayscale and image_set.images.shape[1] == 3:
        image_set = to_grayscale(image_set)
    return resize(image_set, plan.size, plan.size)


def prepare_domain_pair(config: ExperimentConfig, plan: PreprocessPlan) -> DomainPair:
    """
    读取 → 截取样本 → 灰度化 → 缩放 → 类别求交

    Returns:
        类别一致的 DomainPair
    """
    domains = []
    for offset, source in enumerate((config.source, config.target)):
        image_set = load_dataset(source)
        image_set = subsample(image_set, source.limit, config.global_seed + offset)
        domains.append(_preprocess(image_set, source.id, plan))

    pair = intersect_labels(domains[0], domains[1], plan.mapping)
    if pair.source.image_shape != pair.target.image_shape:
        raise ConfigError(
            f"预处理后源域 {pair.source.image_shape} 与目标域 {pair.target.image_shape} 形状不一致"
        )
    logger.info(f"ℹ️ {describe(pair.source, config.source.id)}")
    logger.info(f"ℹ️ {describe(pair.target, config.target.id)}")
    return pair


def resolve_pool(config: ExperimentConfig, plan: PreprocessPlan) -> List[Augmentation]:
    """配置中的增强池优先，否则按数据域类型取默认池"""
    return list(config.augmentation_pool) if config.augmentation_pool else default_pool(plan.domain_kind)
