"""
统一异常定义

所有业务异常都继承 ScreenError，并携带 error_code，CLI 中间件据此决定退出码与提示信息。
"""

from __future__ import annotations

from typing import Optional


class ScreenError(Exception):
    """筛选流程基础异常"""

    error_code: str = "SCREEN_ERROR"

    def __init__(self, message: str = "", error_code: Optional[str] = None):
        super().__init__(message)
        if error_code:
            self.error_code = error_code


# 清单（manifest）相关
class MissingColumnError(ScreenError, ValueError):
    error_code = "MISSING_COLUMN"


class DuplicateSampleIdError(ScreenError, ValueError):
    error_code = "DUPLICATE_SAMPLE_ID"


class MalformedRowError(ScreenError, ValueError):
    error_code = "MALFORMED_ROW"

    def __init__(self, index: int, reason: str):
        super().__init__(f"第 {index} 行格式错误: {reason}")
        self.index = index
        self.reason = reason


class InsufficientSamplesError(ScreenError, ValueError):
    error_code = "INSUFFICIENT_SAMPLES"


# 图像相关
class DimensionMismatchError(ScreenError, ValueError):
    error_code = "DIMENSION_MISMATCH"


class EmptyInputError(ScreenError, ValueError):
    error_code = "EMPTY_INPUT"


class ChannelMismatchError(ScreenError, ValueError):
    error_code = "CHANNEL_MISMATCH"


class GridMismatchError(ScreenError, ValueError):
    error_code = "GRID_MISMATCH"


class MissingCountError(ScreenError, KeyError):
    error_code = "MISSING_COUNT"

    def __init__(self, sample_id: str):
        super().__init__(f"缺少细胞核计数: {sample_id}")
        self.sample_id = sample_id

    def __str__(self) -> str:
        return self.args[0]


# 模型与训练相关
class ShapeMismatchError(ScreenError, ValueError):
    error_code = "SHAPE_MISMATCH"


class DomainError(ScreenError, ValueError):
    error_code = "DOMAIN_ERROR"


class RankOutOfRangeError(ScreenError, ValueError):
    error_code = "RANK_OUT_OF_RANGE"


class DegenerateLabelsError(ScreenError, ValueError):
    error_code = "DEGENERATE_LABELS"


class DegenerateDataError(ScreenError, ValueError):
    error_code = "DEGENERATE_DATA"


class NegativeMoiError(ScreenError, ValueError):
    error_code = "NEGATIVE_MOI"


class ScreenIOError(ScreenError, OSError):
    error_code = "IO_ERROR"


class CheckpointMismatchError(ScreenError, ValueError):
    error_code = "CHECKPOINT_MISMATCH"


class ConfigError(ScreenError, ValueError):
    error_code = "CONFIG_ERROR"


class StageError(ScreenError):
    """流水线阶段失败，携带阶段名与退出码"""

    error_code = "STAGE_FAILED"

    def __init__(self, stage: str, exit_code: int, cause: BaseException):
        super().__init__(f"[{stage}] 阶段失败: {cause}")
        self.stage = stage
        self.exit_code = exit_code
        self.cause = cause
