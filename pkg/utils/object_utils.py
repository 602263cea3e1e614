from dataclasses import fields, is_dataclass
from typing import Any, Dict, List, Type, TypeVar

T = TypeVar("T")


def pick_properties(d: Dict[str, Any] | None, keys: List[str] | None = None) -> Dict[str, Any]:
    """
    获取字典中指定的属性，合成并返回新的字典

    Args:
        d: 原始字典
        keys: 需要提取的属性

    Returns:
        新的字典
    """
    if not isinstance(d, dict) or len(d) == 0:
        return {}

    if not isinstance(keys, list) or len(keys) == 0:
        return dict(d)

    return {k: d[k] for k in keys if k in d}


def get_property(d: Dict[str, Any] | None, key: str | None = None, defaultValue: Any = None) -> Any:
    """
    获取字典中指定的属性，支持 "a.b.c" 形式的嵌套路径

    Args:
        d: 原始字典
        key: 属性名或点分路径
        defaultValue: 不存在时的默认值

    Returns:
        属性值
    """
    if not isinstance(d, dict) or not key:
        return defaultValue
    current: Any = d
    for part in key.split("."):
        if not isinstance(current, dict) or part not in current:
            return defaultValue
        current = current[part]
    return current


def dataclass_from_dict(cls: Type[T], d: Dict[str, Any] | None) -> T:
    """用字典中与 dataclass 字段同名的项构造实例，其余项忽略"""
    if not is_dataclass(cls):
        raise TypeError(f"{cls} 不是 dataclass")
    names = [f.name for f in fields(cls)]
    return cls(**pick_properties(d, names) if d else {})
