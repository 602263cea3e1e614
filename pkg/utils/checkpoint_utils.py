'''
Description  : DGCK 检查点读写
               magic "DGCK" | u32 version | u32 描述长度 + UTF-8 JSON | u32 张量数
               每个张量: u16 名称长度, 名称, u8 维数, u32 各维, 小端 float32 数据
'''

import json
import logging
import os
import struct
from typing import Any, Dict, Tuple

import numpy as np

from utils.errors import FormatError
from utils.files_utils import ensure_parent_dir, read_exact, read_struct, trans_b_to_upper

logger = logging.getLogger(__name__)

DGCK_MAGIC = b"DGCK"
DGCK_VERSION = 1


def write_dgck(path: str, header: Dict[str, Any], tensors: Dict[str, np.ndarray]) -> None:
    """
    写入 DGCK 检查点

    Args:
        path: 输出文件路径
        header: 描述信息（含 kind 标签），序列化为 JSON
        tensors: 有序的 名称 → 张量
    """
    descriptor = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ensure_parent_dir(path)
    with open(path, "wb") as f:
        f.write(DGCK_MAGIC)
        f.write(struct.pack("<II", DGCK_VERSION, len(descriptor)))
        f.write(descriptor)
        f.write(struct.pack("<I", len(tensors)))
        for name, tensor in tensors.items():
            raw_name = name.encode("utf-8")
            array = np.ascontiguousarray(tensor, dtype="<f4")
            f.write(struct.pack("<H", len(raw_name)))
            f.write(raw_name)
            f.write(struct.pack("<B", array.ndim))
            f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(array.tobytes())

    size = trans_b_to_upper(os.path.getsize(path))
    logger.info(f"💾 检查点已保存: {path} ({size['value']:.2f}{size['unit']})")


def read_dgck(path: str) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    读取 DGCK 检查点，头部不合法时在读取数据前报错

    Args:
        path: 检查点路径

    Returns:
        (描述信息, 名称 → float32 张量)
    """
    with open(path, "rb") as f:
        magic = read_exact(f, 4, "魔数")
        if magic != DGCK_MAGIC:
            raise FormatError(f"检查点魔数错误: {magic!r}, 期望 {DGCK_MAGIC!r}")
        (version,) = read_struct(f, "<I", "版本号")
        if version != DGCK_VERSION:
            raise FormatError(f"检查点版本不支持: {version}, 期望 {DGCK_VERSION}")
        (descriptor_len,) = read_struct(f, "<I", "描述长度")
        try:
            header = json.loads(read_exact(f, descriptor_len, "描述信息").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"检查点描述信息无法解析: {e}") from e

        (count,) = read_struct(f, "<I", "张量数量")
        tensors: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = read_struct(f, "<H", "张量名长度")
            name = read_exact(f, name_len, "张量名").decode("utf-8")
            (ndim,) = read_struct(f, "<B", f"{name} 维数")
            dims = read_struct(f, f"<{ndim}I", f"{name} 形状") if ndim else ()
            nbytes = 4 * int(np.prod(dims, dtype=np.int64))
            payload = read_exact(f, nbytes, f"{name} 数据")
            tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)

        if f.read(1):
            raise FormatError(f"检查点末尾存在多余数据: {path}")

    return header, tensors
