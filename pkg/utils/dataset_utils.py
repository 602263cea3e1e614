'''
Description  : 五个基准数据集的读取、格式转换、预处理与划分
'''

import logging
import os
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import ConfigError, FormatError, ShapeError
from utils.files_utils import ensure_parent_dir, read_exact, read_struct

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32
DGIM_MAGIC = b"DGIM"
DGIM_VERSION = 1

DIGIT_CLASSES = [str(d) for d in range(10)]
CIFAR10_CLASSES = [
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
]
STL10_CLASSES = [
    "airplane", "bird", "car", "cat", "deer",
    "dog", "horse", "monkey", "ship", "truck",
]
# CIFAR10 ↔ STL10 的 9 个共同类别（frog、monkey 各自独有）
CIFAR10_STL10_MAPPING: Dict[str, str] = {
    "airplane": "airplane",
    "automobile": "car",
    "bird": "bird",
    "cat": "cat",
    "deer": "deer",
    "dog": "dog",
    "horse": "horse",
    "ship": "ship",
    "truck": "truck",
}


@dataclass
class LabeledImageSet:
    """
    带标签的图像集合（一个数据域 D）

    Args:
        images: N×C×H×W 的 uint8 像素
        labels: 长度 N 的 uint8 标签
        class_names: K 个类别名
    """

    images: np.ndarray
    labels: np.ndarray
    class_names: List[str]

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8).reshape(-1)
        self.class_names = [str(name) for name in self.class_names]
        if self.images.ndim != 4:
            raise ShapeError(f"图像必须为 N×C×H×W, 实际 {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"图像数 {self.images.shape[0]} 与标签数 {self.labels.shape[0]} 不一致")
        if self.images.shape[0] < 1:
            raise ShapeError("数据集不能为空")
        if int(self.labels.max()) >= len(self.class_names):
            raise ShapeError(f"标签超出类别数 {len(self.class_names)}")

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(int(v) for v in self.images.shape[1:])

    def subset(self, indices: np.ndarray) -> "LabeledImageSet":
        return LabeledImageSet(self.images[indices], self.labels[indices], self.class_names)


@dataclass
class DomainPair:
    """源域 D^s 与目标域 D^t，类别数与类别顺序一致"""

    source: LabeledImageSet
    target: LabeledImageSet

    def __post_init__(self):
        if self.source.class_names != self.target.class_names:
            raise ShapeError(
                f"源域与目标域类别不一致: {self.source.class_names} vs {self.target.class_names}"
            )


@dataclass
class SplitSpec:
    """源域 train / validation 划分"""

    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.val_fraction < 0.5:
            raise ConfigError(f"val_fraction 必须在 (0, 0.5) 内, 实际 {self.val_fraction}")


# region 读取器


def _read_idx_header(f, expected_magic: int, ndim: int, path: str) -> Tuple[int, ...]:
    (magic,) = read_struct(f, ">I", "IDX 魔数")
    if magic != expected_magic:
        raise FormatError(f"IDX 魔数错误 {path}: 0x{magic:08x}, 期望 0x{expected_magic:08x}")
    return read_struct(f, f">{ndim}I", "IDX 维度")


def load_idx(images_path: str, labels_path: str, class_names: Optional[List[str]] = None) -> LabeledImageSet:
    """
    读取大端 IDX 格式（MNIST 发布格式）

    Args:
        images_path: 图像文件（魔数 0x00000803，维度 N,H,W）
        labels_path: 标签文件（魔数 0x00000801，维度 N）

    Returns:
        C=1 的图像集
    """
    with open(images_path, "rb") as fi, open(labels_path, "rb") as fl:
        n_images, h, w = _read_idx_header(fi, IDX_IMAGE_MAGIC, 3, images_path)
        (n_labels,) = _read_idx_header(fl, IDX_LABEL_MAGIC, 1, labels_path)
        if n_images != n_labels:
            raise FormatError(f"IDX 图像数 {n_images} 与标签数 {n_labels} 不一致")
        pixels = read_exact(fi, n_images * h * w, "IDX 图像数据")
        labels = read_exact(fl, n_labels, "IDX 标签数据")

    images = np.frombuffer(pixels, dtype=np.uint8).reshape(n_images, 1, h, w)
    logger.info(f"读取 IDX: {images_path} → {n_images} 张 {h}×{w}")
    return LabeledImageSet(images, np.frombuffer(labels, dtype=np.uint8), class_names or DIGIT_CLASSES)


def load_cifar10_binary(paths: Sequence[str]) -> LabeledImageSet:
    """
    读取 CIFAR-10 二进制批次：每条记录 1 字节标签 + 3072 字节按通道平铺的 32×32 RGB

    Args:
        paths: 批次文件列表（按给定顺序拼接）
    """
    images: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    for path in paths:
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES:
            raise FormatError(f"CIFAR-10 文件长度 {len(raw)} 不是 {CIFAR_RECORD_BYTES} 的整数倍: {path}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels.append(records[:, 0])
        images.append(records[:, 1:].reshape(-1, 3, 32, 32))
        logger.info(f"读取 CIFAR-10 批次: {path} → {records.shape[0]} 条")
    return LabeledImageSet(np.concatenate(images), np.concatenate(labels), CIFAR10_CLASSES)


def load_stl10_binary(images_path: str, labels_path: str) -> LabeledImageSet:
    """
    读取 STL10 官方二进制：u8 N×3×96×96（每通道按列存储），标签为 1..10
    """
    with open(images_path, "rb") as f:
        raw = f.read()
    record = 3 * 96 * 96
    if len(raw) == 0 or len(raw) % record:
        raise FormatError(f"STL10 图像文件长度 {len(raw)} 不是 {record} 的整数倍")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3, 96, 96).transpose(0, 1, 3, 2)
    labels = np.fromfile(labels_path, dtype=np.uint8)
    if labels.shape[0] != images.shape[0]:
        raise FormatError(f"STL10 图像数 {images.shape[0]} 与标签数 {labels.shape[0]} 不一致")
    if labels.min() < 1 or labels.max() > 10:
        raise FormatError("STL10 标签必须在 1..10 内")
    return LabeledImageSet(images, labels - 1, STL10_CLASSES)


def load_csv_images(
    path: str, channels: int, height: int, width: int, class_names: Optional[List[str]] = None
) -> LabeledImageSet:
    """
    读取 CSV：每行一个样本，首列标签，其后 C·H·W 个像素

    像素取值范围决定缩放方式：[0,1] 乘 255，[-1,1]（含负值）线性映射到 0..255，
    [0,255] 原样保留；其余范围报错。标签必须是 [0, 255] 内的整数
    """
    table = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    expected = 1 + channels * height * width
    if table.shape[1] != expected:
        raise FormatError(f"CSV 每行应有 {expected} 列, 实际 {table.shape[1]}")

    raw_labels = table[:, 0]
    if np.any(raw_labels != np.floor(raw_labels)) or raw_labels.min() < 0 or raw_labels.max() > 255:
        raise FormatError(f"CSV 标签必须是 [0, 255] 内的整数, 实际范围 [{raw_labels.min()}, {raw_labels.max()}]")
    labels = raw_labels.astype(np.int64)

    pixels = table[:, 1:]
    low, high = float(pixels.min()), float(pixels.max())
    if -1.0 <= low < 0.0 and high <= 1.0:
        pixels = (pixels + 1.0) * 127.5
    elif low >= 0.0 and high <= 1.0:
        pixels = pixels * 255.0
    elif low < 0.0 or high > 255.0:
        raise FormatError(f"CSV 像素范围 [{low}, {high}] 无法识别（支持 [0,1]、[-1,1]、[0,255]）")
    images = np.clip(np.floor(pixels + 0.5), 0, 255).astype(np.uint8)
    names = class_names or [str(i) for i in range(int(labels.max()) + 1)]
    return LabeledImageSet(images.reshape(-1, channels, height, width), labels, names)


def save_dgim(image_set: LabeledImageSet, path: str) -> None:
    """
    写入 DGIM 容器：magic | u32 version | u32 N | u16 H | u16 W | u8 C | u8 K |
    K×(u8 长度 + 类别名) | 像素 | 标签（全部小端）
    """
    n, c, h, w = image_set.images.shape
    k = image_set.num_classes
    # 头部字段宽度：N u32, H/W u16, C/K u8
    if n > 0xFFFFFFFF or h > 0xFFFF or w > 0xFFFF or c > 0xFF or k > 0xFF:
        raise FormatError(f"DGIM 头部无法表示: N={n} H={h} W={w} C={c} K={k}（C、K 至多 255）")
    ensure_parent_dir(path)
    with open(path, "wb") as f:
        f.write(DGIM_MAGIC)
        f.write(struct.pack("<IIHHBB", DGIM_VERSION, n, h, w, c, k))
        for name in image_set.class_names:
            raw = name.encode("utf-8")
            if len(raw) > 255:
                raise FormatError(f"类别名过长: {name}")
            f.write(struct.pack("<B", len(raw)))
            f.write(raw)
        f.write(image_set.images.tobytes())
        f.write(image_set.labels.tobytes())
    logger.info(f"💾 DGIM 已保存: {path} ({n} 张 {c}×{h}×{w}, K={image_set.num_classes})")


def load_dgim(path: str) -> LabeledImageSet:
    """读取 DGIM 容器，头部不合法时在读取像素前报错"""
    with open(path, "rb") as f:
        magic = read_exact(f, 4, "DGIM 魔数")
        if magic != DGIM_MAGIC:
            raise FormatError(f"DGIM 魔数错误: {magic!r}")
        version, n, h, w, c, k = read_struct(f, "<IIHHBB", "DGIM 头部")
        if version != DGIM_VERSION:
            raise FormatError(f"DGIM 版本不支持: {version}")
        if n < 1 or h < 1 or w < 1 or c < 1 or k < 1:
            raise FormatError(f"DGIM 头部形状非法: N={n} H={h} W={w} C={c} K={k}")
        names = []
        for _ in range(k):
            (length,) = read_struct(f, "<B", "类别名长度")
            names.append(read_exact(f, length, "类别名").decode("utf-8"))
        pixels = read_exact(f, n * c * h * w, "DGIM 像素")
        labels = read_exact(f, n, "DGIM 标签")
        if f.read(1):
            raise FormatError(f"DGIM 末尾存在多余数据: {path}")

    images = np.frombuffer(pixels, dtype=np.uint8).reshape(n, c, h, w)
    return LabeledImageSet(images, np.frombuffer(labels, dtype=np.uint8), names)


# endregion

# region 预处理


def to_grayscale(image_set: LabeledImageSet) -> LabeledImageSet:
    """ITU-R BT.601 亮度：Y = round(0.299R + 0.587G + 0.114B)"""
    if image_set.images.shape[1] != 3:
        raise ShapeError(f"灰度化需要 3 通道输入, 实际 {image_set.images.shape[1]} 通道")
    rgb = image_set.images.astype(np.float64)
    luma = 0.299 * rgb[:, 0] + 0.587 * rgb[:, 1] + 0.114 * rgb[:, 2]
    gray = np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)[:, None]
    return LabeledImageSet(gray, image_set.labels, image_set.class_names)


def _bilinear_axis(in_size: int, out_size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # 像素中心对齐（align_corners=false）
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    return lo, hi, src - lo


def resize(image_set: LabeledImageSet, out_h: int, out_w: int) -> LabeledImageSet:
    """
    双线性缩放（align_corners=false），结果四舍五入（.5 向上）回 uint8

    Args:
        image_set: 输入图像集
        out_h: 输出高
        out_w: 输出宽
    """
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"输出尺寸必须 ≥ 1, 实际 {out_h}×{out_w}")
    _, _, h, w = image_set.images.shape
    if (h, w) == (out_h, out_w):
        return image_set

    y0, y1, fy = _bilinear_axis(h, out_h)
    x0, x1, fx = _bilinear_axis(w, out_w)
    img = image_set.images.astype(np.float64)
    top = img[:, :, y0][:, :, :, x0] * (1 - fx) + img[:, :, y0][:, :, :, x1] * fx
    bottom = img[:, :, y1][:, :, :, x0] * (1 - fx) + img[:, :, y1][:, :, :, x1] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    resized = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return LabeledImageSet(resized, image_set.labels, image_set.class_names)


def intersect_labels(
    a: LabeledImageSet, b: LabeledImageSet, mapping: Optional[Dict[str, str]] = None
) -> DomainPair:
    """
    只保留两个数据集共有的类别，并按源域类别名排序重新编号为 0..K-1

    Args:
        a: 源域
        b: 目标域
        mapping: a 的类别名 → b 的类别名（为 None 时按同名匹配）

    Returns:
        类别对齐后的 DomainPair（类别名取源域名称）
    """
    mapping = mapping if mapping is not None else {name: name for name in a.class_names}
    shared = sorted(
        name_a
        for name_a, name_b in mapping.items()
        if name_a in a.class_names and name_b in b.class_names
    )
    if not shared:
        raise ConfigError("两个数据集没有共同类别")

    def relabel(image_set: LabeledImageSet, names: List[str]) -> LabeledImageSet:
        lookup = np.full(image_set.num_classes, -1, dtype=np.int64)
        for new_label, name in enumerate(names):
            lookup[image_set.class_names.index(name)] = new_label
        new_labels = lookup[image_set.labels]
        keep = np.flatnonzero(new_labels >= 0)
        if keep.size == 0:
            raise ConfigError("过滤后数据集为空")
        return LabeledImageSet(image_set.images[keep], new_labels[keep], shared)

    source = relabel(a, shared)
    target = relabel(b, [mapping[name] for name in shared])
    dropped = (len(a) - len(source), len(b) - len(target))
    logger.info(f"类别求交: K={len(shared)}, 丢弃样本 源域 {dropped[0]} / 目标域 {dropped[1]}")
    return DomainPair(source=source, target=target)


def split(image_set: LabeledImageSet, spec: SplitSpec) -> Tuple[LabeledImageSet, LabeledImageSet]:
    """
    分层划分 S_train / S_val：每类先用种子打乱，再按 val_fraction 取后缀为验证集

    Returns:
        (S_train, S_val)
    """
    rng = np.random.default_rng(spec.seed)
    train_idx: List[np.ndarray] = []
    val_idx: List[np.ndarray] = []
    for label in range(image_set.num_classes):
        members = np.flatnonzero(image_set.labels == label)
        if members.size == 0:
            continue
        if members.size < 2:
            raise ShapeError(f"类别 {image_set.class_names[label]} 样本数少于 2，无法划分")
        members = members[rng.permutation(members.size)]
        n_val = min(max(int(round(spec.val_fraction * members.size)), 1), members.size - 1)
        train_idx.append(members[: members.size - n_val])
        val_idx.append(members[members.size - n_val :])

    train_all = np.concatenate(train_idx)
    val_all = np.concatenate(val_idx)
    train_all = train_all[rng.permutation(train_all.size)]
    val_all = val_all[rng.permutation(val_all.size)]
    return image_set.subset(train_all), image_set.subset(val_all)


def subsample(image_set: LabeledImageSet, limit: Optional[int], seed: int) -> LabeledImageSet:
    """按种子随机截取至多 limit 个样本（桌面规模实验用）"""
    if not limit or limit >= len(image_set):
        return image_set
    order = np.random.default_rng(seed).permutation(len(image_set))[:limit]
    return image_set.subset(np.sort(order))


def to_float(image_set) -> np.ndarray:
    """像素 / 255，返回 [0,1] 的 float32 张量"""
    images = image_set.images if isinstance(image_set, LabeledImageSet) else np.asarray(image_set)
    return images.astype(np.float32) / np.float32(255.0)


def flatten_pixels(image_set: LabeledImageSet) -> np.ndarray:
    """传统学习器使用的原始像素特征矩阵 N×(C·H·W)"""
    return to_float(image_set).reshape(len(image_set), -1)


# endregion


def describe(image_set: LabeledImageSet, name: str = "") -> str:
    c, h, w = image_set.image_shape
    counts = np.bincount(image_set.labels, minlength=image_set.num_classes)
    prefix = f"{name}: " if name else ""
    return f"{prefix}N={len(image_set)} {c}×{h}×{w} K={image_set.num_classes} 每类 {counts.min()}~{counts.max()}"


def dataset_exists(paths: Sequence[str]) -> bool:
    return all(os.path.exists(p) for p in paths)
