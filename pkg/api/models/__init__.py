"""
DEEMD 数据模型模块

- enums.py: 枚举定义（阶段名与退出码）
- base.py: 基础响应模型
- requests/: 运行配置
- responses/: 阶段结果与运行报告
- entities/: 缓存记录
"""

from .enums import STAGE_EXIT_CODES, UNKNOWN_EXIT_CODE, CacheStatus, MapSampleScope, StageName
from .base import BaseResponse
from .requests.run_config import RunConfig, apply_overrides, load_run_config
from .responses.stage_responses import ScreenReport, StageResult
from .entities.cache_record import CacheRecord

__all__ = [
    # 枚举
    "StageName", "CacheStatus", "MapSampleScope", "STAGE_EXIT_CODES", "UNKNOWN_EXIT_CODE",

    # 基础
    "BaseResponse",

    # 请求
    "RunConfig", "apply_overrides", "load_run_config",

    # 响应
    "StageResult", "ScreenReport",

    # 实体
    "CacheRecord",
]
