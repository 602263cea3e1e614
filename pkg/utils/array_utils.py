from typing import List

import numpy as np


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    """
    argmax（并列取最小类别号）等于标签的比例

    Args:
        probs: N×K 概率或分数
        labels: 长度 N 的标签

    Returns:
        准确率
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] == 0:
        raise ValueError("accuracy: 样本为空")
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def filter_valid_strings(s_list: List[str] | None) -> List[str]:
    """
    过滤掉无效的字符串（空、None、仅空格）

    Args:
        s_list: 待过滤的字符串列表

    Returns:
        过滤后的字符串列表
    """
    if not isinstance(s_list, list):
        return []

    return ["".join(s.split()) for s in s_list if isinstance(s, str) and s.strip()]
