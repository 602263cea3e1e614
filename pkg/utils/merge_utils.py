from copy import deepcopy
from typing import Any, Dict, Sequence


def deep_merge(a: Any, b: Any) -> Any:
    """
    深合并，将b合并到a中：字典递归合并，列表与标量由b整体覆盖

    Args:
        a: 默认值
        b: 覆盖值

    Returns:
        合并后的新对象（不修改入参）
    """
    # 类型不一致或非字典，b 直接覆盖
    if not (isinstance(a, dict) and isinstance(b, dict)):
        return deepcopy(b)

    result = deepcopy(a)
    for key, value in b.items():
        if key in result:
            result[key] = deep_merge(result[key], value)
        else:
            result[key] = deepcopy(value)
    return result


def merge_config_layers(layers: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
    """按顺序合并多层配置，后面的层优先"""
    result: Dict[str, Any] = {}
    for layer in layers:
        if layer:
            result = deep_merge(result, layer)
    return result
