"""
阶段结果与运行报告
"""

from typing import Any, Dict, List, Optional

from pydantic import Field

from ..base import BaseResponse
from ..enums import CacheStatus, StageName


class StageResult(BaseResponse):
    """单个阶段的执行结果"""
    stage: StageName = Field(..., description="阶段名")
    cache: CacheStatus = Field(CacheStatus.MISS, description="缓存状态")
    cache_key: Optional[str] = Field(None, description="缓存键")
    outputs: Dict[str, str] = Field(default_factory=dict, description="产物名 -> 路径")


class ScreenReport(BaseResponse):
    """完整筛选运行报告（report.json）"""
    config: Dict[str, Any] = Field(default_factory=dict, description="生效的运行配置")
    thresholds: Dict[str, Any] = Field(default_factory=dict, description="阈值")
    dataset_hashes: Dict[str, str] = Field(default_factory=dict, description="输入数据哈希")
    validation_ap: Optional[float] = Field(None, description="验证集AP")
    test_ap: Optional[float] = Field(None, description="未给药测试集AP")
    effective_set: List[str] = Field(default_factory=list, description="有效药物集合")
    stages: List[StageResult] = Field(default_factory=list, description="各阶段结果")
