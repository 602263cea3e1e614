import json
import logging
import os
import struct
from typing import Any, BinaryIO, Dict, Optional

import yaml

from utils.errors import FormatError

logger = logging.getLogger(__name__)


def load_yaml_content(content: str) -> Optional[Dict[str, Any]]:
    """
    解析YAML（或JSON）内容

    Args:
        content: YAML字符串内容

    Returns:
        解析后的字典，失败返回None
    """
    try:
        return yaml.safe_load(content)
    except yaml.YAMLError as e:
        logger.error(f"YAML解析失败: {e}")
        return None


def read_exact(f: BinaryIO, size: int, what: str) -> bytes:
    """
    从二进制流读取恰好 size 个字节

    Args:
        f: 二进制文件对象
        size: 字节数
        what: 读取内容描述（用于报错）

    Returns:
        读取到的字节
    """
    data = f.read(size)
    if len(data) != size:
        raise FormatError(f"文件被截断: 读取{what}需要 {size} 字节, 实际 {len(data)} 字节")
    return data


def read_struct(f: BinaryIO, fmt: str, what: str) -> tuple:
    """按 struct 格式读取并解包"""
    return struct.unpack(fmt, read_exact(f, struct.calcsize(fmt), what))


def ensure_parent_dir(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_json(path: str, data: Dict[str, Any]) -> None:
    """写入带缩进的JSON文件（键保持插入顺序）"""
    ensure_parent_dir(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False)


def trans_b_to_upper(b: int) -> Dict[str, Any]:
    """
    将字节数转为KB、MB、GB

    Args:
        b: 字节

    Returns:
        转换后的数值 + 单位
    """
    unit = "B"
    value: float = b
    for next_unit in ("KB", "MB", "GB"):
        if value <= 1024:
            break
        value = value / 1024
        unit = next_unit

    return {"value": value, "unit": unit}
