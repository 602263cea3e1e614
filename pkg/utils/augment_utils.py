'''
Description  : 数据增强池 A、为每个基础模型分配互不相同的增强子集 A_i，以及各增强的实现
'''

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from utils.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

# 各增强的参数名及上限
AUGMENTATION_LIMITS: Dict[str, Dict[str, float]] = {
    "horizontal_flip": {"probability": 1.0},
    "rotation": {"max_degrees": 30.0},
    "translate": {"max_pixels": 4.0},
    "zoom": {"max_fraction": 0.3},
    "brightness": {"max_delta": 0.3},
    "contrast": {"max_factor": 0.5},
    "gaussian_noise": {"sigma": 0.1},
}


@dataclass
class Augmentation:
    """
    单个增强

    Args:
        kind: 增强类型，见 AUGMENTATION_LIMITS
        params: 参数（取值必须为正且不超过上限）
    """

    kind: str
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in AUGMENTATION_LIMITS:
            raise ConfigError(f"未知的增强类型: {self.kind}")
        limits = AUGMENTATION_LIMITS[self.kind]
        if set(self.params) != set(limits):
            raise ConfigError(f"{self.kind} 需要参数 {sorted(limits)}, 实际 {sorted(self.params)}")
        for name, value in self.params.items():
            if not 0 < float(value) <= limits[name]:
                raise ConfigError(f"{self.kind}.{name}={value} 超出范围 (0, {limits[name]}]")

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Augmentation":
        params = {k: float(v) for k, v in d.items() if k != "kind"}
        return cls(kind=d["kind"], params=params)


@dataclass
class AugmentationPlan:
    """增强池 A 与每个模型的子集 A_i（以池内索引表示）"""

    pool: List[Augmentation]
    per_model: List[List[int]]
    seed: int = 0

    def __post_init__(self):
        seen = set()
        for subset in self.per_model:
            key = frozenset(subset)
            if not subset or not all(0 <= i < len(self.pool) for i in subset):
                raise ConfigError(f"增强子集非法: {subset}")
            if key in seen:
                raise ConfigError(f"增强子集重复: {subset}")
            seen.add(key)

    def augmentations_for(self, model_index: int) -> List[Augmentation]:
        return [self.pool[i] for i in self.per_model[model_index]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pool": [aug.to_dict() for aug in self.pool],
            "per_model": [list(subset) for subset in self.per_model],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "AugmentationPlan":
        return cls(
            pool=[Augmentation.from_dict(a) for a in d["pool"]],
            per_model=[list(s) for s in d["per_model"]],
            seed=int(d.get("seed", 0)),
        )


def default_pool(domain_kind: str) -> List[Augmentation]:
    """
    默认增强池；数字数据集不含水平翻转（翻转会改变数字含义）

    Args:
        domain_kind: digits | objects
    """
    pool = [
        Augmentation("rotation", {"max_degrees": 15.0}),
        Augmentation("translate", {"max_pixels": 2.0}),
        Augmentation("zoom", {"max_fraction": 0.1}),
        Augmentation("brightness", {"max_delta": 0.2}),
        Augmentation("contrast", {"max_factor": 0.3}),
        Augmentation("gaussian_noise", {"sigma": 0.05}),
    ]
    if domain_kind == "objects":
        return [Augmentation("horizontal_flip", {"probability": 0.5})] + pool
    if domain_kind == "digits":
        return pool
    raise ConfigError(f"未知的数据域类型: {domain_kind}")


# 子集编号需放进 int64
MAX_BITMASK_POOL = 62


def assign_subsets(pool: Sequence[Augmentation], n_models: int, seed: int) -> AugmentationPlan:
    """
    在子集空间中无放回抽取 N 个互不相同的非空子集

    池不超过 MAX_BITMASK_POOL 个增强时按子集编号抽取；更大的池逐个增强抽取
    包含掩码，丢弃空集与重复子集后重抽

    Args:
        pool: 增强池
        n_models: 模型数 N
        seed: 随机种子

    Returns:
        增强计划
    """
    total = 2 ** len(pool) - 1
    if n_models < 1 or n_models > total:
        raise ConfigError(f"增强池大小 {len(pool)} 只有 {total} 个非空子集，无法分配给 {n_models} 个模型")
    rng = np.random.default_rng(seed)
    if len(pool) <= MAX_BITMASK_POOL:
        codes = rng.choice(total, size=n_models, replace=False) + 1
        per_model = [[i for i in range(len(pool)) if (int(code) >> i) & 1] for code in codes]
    else:
        per_model = []
        seen = set()
        while len(per_model) < n_models:
            subset = np.flatnonzero(rng.random(len(pool)) < 0.5).tolist()
            if subset and tuple(subset) not in seen:
                seen.add(tuple(subset))
                per_model.append(subset)
    return AugmentationPlan(pool=list(pool), per_model=per_model, seed=seed)


def full_plan(pool: Sequence[Augmentation]) -> List[Augmentation]:
    """完整增强集 A（元分类器与 HCNN 使用）"""
    return list(pool)


# region 各增强的确定性实现（参数已给定）


def flip_horizontal(image: np.ndarray) -> np.ndarray:
    return image[:, :, ::-1].copy()


def shift_image(image: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """平移图像（dx 向右、dy 向下），空出的像素填 0"""
    _, h, w = image.shape
    out = np.zeros_like(image)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_y = slice(max(0, -dy), h - max(0, dy))
    src_x = slice(max(0, -dx), w - max(0, dx))
    dst_y = slice(max(0, dy), h - max(0, -dy))
    dst_x = slice(max(0, dx), w - max(0, -dx))
    out[:, dst_y, dst_x] = image[:, src_y, src_x]
    return out


def _resample_nearest(image: np.ndarray, src_y: np.ndarray, src_x: np.ndarray) -> np.ndarray:
    _, h, w = image.shape
    iy = np.floor(src_y + 0.5).astype(np.int64)
    ix = np.floor(src_x + 0.5).astype(np.int64)
    inside = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
    out = np.zeros_like(image)
    out[:, inside] = image[:, iy[inside], ix[inside]]
    return out


def rotate_image(image: np.ndarray, degrees: float) -> np.ndarray:
    """绕图像中心旋转（最近邻重采样），空出的像素填 0"""
    _, h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    theta = np.deg2rad(degrees)
    cos, sin = np.cos(theta), np.sin(theta)
    # 反向映射：输出像素 → 源像素
    src_x = cos * (xx - cx) + sin * (yy - cy) + cx
    src_y = -sin * (xx - cx) + cos * (yy - cy) + cy
    return _resample_nearest(image, src_y, src_x)


def zoom_image(image: np.ndarray, factor: float) -> np.ndarray:
    """以中心缩放 factor 倍（最近邻），缩小后空出的像素填 0"""
    _, h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return _resample_nearest(image, (yy - cy) / factor + cy, (xx - cx) / factor + cx)


def adjust_brightness(image: np.ndarray, delta: float) -> np.ndarray:
    return image + np.float32(delta)


def adjust_contrast(image: np.ndarray, factor: float) -> np.ndarray:
    mean = image.mean(dtype=np.float64)
    return ((image - mean) * factor + mean).astype(np.float32)


def add_gaussian_noise(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return image + rng.normal(0.0, sigma, size=image.shape).astype(np.float32)


# endregion


def apply(aug: Augmentation, image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    对单张 C×H×W、取值 [0,1] 的图像应用一次增强，参数在配置范围内均匀抽取

    Args:
        aug: 增强
        image: 输入图像
        rng: 调用方持有的随机数生成器

    Returns:
        截断到 [0,1] 的新图像
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3:
        raise ShapeError(f"增强需要 C×H×W 图像, 实际 {image.shape}")
    p = aug.params
    if aug.kind == "horizontal_flip":
        out = flip_horizontal(image) if rng.random() < p["probability"] else image.copy()
    elif aug.kind == "rotation":
        out = rotate_image(image, rng.uniform(-p["max_degrees"], p["max_degrees"]))
    elif aug.kind == "translate":
        limit = int(p["max_pixels"])
        dx, dy = rng.integers(-limit, limit + 1, size=2)
        out = shift_image(image, int(dx), int(dy))
    elif aug.kind == "zoom":
        out = zoom_image(image, 1.0 + rng.uniform(-p["max_fraction"], p["max_fraction"]))
    elif aug.kind == "brightness":
        out = adjust_brightness(image, rng.uniform(-p["max_delta"], p["max_delta"]))
    elif aug.kind == "contrast":
        out = adjust_contrast(image, 1.0 + rng.uniform(-p["max_factor"], p["max_factor"]))
    elif aug.kind == "gaussian_noise":
        out = add_gaussian_noise(image, p["sigma"], rng)
    else:
        raise ConfigError(f"未知的增强类型: {aug.kind}")
    return np.clip(out, 0.0, 1.0).astype(np.float32, copy=False)


def augment_image(
    image: np.ndarray, augmentations: Sequence[Augmentation], rng: np.random.Generator
) -> np.ndarray:
    """按池内顺序依次应用子集中的每个增强"""
    for aug in augmentations:
        image = apply(aug, image, rng)
    return image


def augment_batch(
    images: np.ndarray, augmentations: Sequence[Augmentation], rng: Optional[np.random.Generator]
) -> np.ndarray:
    """逐样本增强 N×C×H×W 批次"""
    rng = rng if rng is not None else np.random.default_rng(0)
    return np.stack([augment_image(image, augmentations, rng) for image in images]).astype(
        np.float32, copy=False
    )
