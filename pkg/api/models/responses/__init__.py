"""
响应模型
"""

from .stage_responses import ScreenReport, StageResult

__all__ = ["ScreenReport", "StageResult"]
