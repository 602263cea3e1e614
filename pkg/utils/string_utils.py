import hashlib
import json
from typing import Any, List


def format_accuracy(value: float) -> str:
    """三位小数定点表示，如 0.7239 → "0.724" """
    return f"{value:.3f}"


def split_csv_list(s: str) -> List[str]:
    """
    按 ',' 分割字符串，自动过滤空项

    Args:
        s: 待分割的字符串

    Returns:
        一维数组
    """
    return [item.strip() for item in s.split(",") if item.strip()]


def short_hash(data: Any, length: int = 12) -> str:
    """对可 JSON 序列化的对象（键排序后）取 sha256 前缀"""
    raw = json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=str)
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:length]
