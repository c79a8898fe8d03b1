"""
阶段缓存记录
"""

from typing import Dict

from pydantic import BaseModel, Field


class CacheRecord(BaseModel):
    """阶段缓存记录：缓存键与产物内容哈希"""
    stage: str = Field(..., description="阶段名")
    key: str = Field(..., description="缓存键")
    outputs: Dict[str, str] = Field(default_factory=dict, description="产物名 -> 相对运行目录的路径")
    hashes: Dict[str, str] = Field(default_factory=dict, description="产物路径 -> SHA-256")
    updated_at: str = Field("", description="写入时间")
