'''
Description  : 统一异常类型
'''

from typing import Any, Optional


class DGError(Exception):
    """所有领域泛化集成工具异常的基类"""


class ShapeError(DGError, ValueError):
    """张量 / 网络结构的形状不匹配"""


class FormatError(DGError, ValueError):
    """二进制文件格式错误（魔数、版本、截断、数量不一致）"""


class ConfigError(DGError, ValueError):
    """配置错误（未知数据集、非法参数等）"""


class TrainingError(DGError):
    """训练过程错误（NaN损失、空数据集等）"""


class StageError(DGError):
    """
    实验某一阶段失败

    Args:
        stage: 失败的阶段名
        cause: 原始异常
        partial: 已完成部分的结果表（可为None）
    """

    def __init__(self, stage: str, cause: BaseException, partial: Optional[Any] = None):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.partial = partial


class NumericError(DGError, ValueError):
    """数值错误（输入含 NaN 等）"""
