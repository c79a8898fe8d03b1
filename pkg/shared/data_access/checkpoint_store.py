"""
模型检查点读写（JSON：结构描述 + 参数向量 + 通道统计 + 训练配置哈希）
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from shared.data_processors.image_processor import ChannelStats, GridConfig
from shared.mil.scorer import ScorerModel
from shared.utilities.errors import CheckpointMismatchError, ScreenIOError
from shared.utilities.file_utils import load_metadata, save_metadata

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """训练产物"""
    model: ScorerModel
    stats: ChannelStats
    grid: GridConfig
    k: int
    config_hash: str
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return self.model.architecture.in_channels


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> Path:
    payload = {
        "version": CHECKPOINT_VERSION,
        "model": checkpoint.model.to_dict(),
        "channel_stats": checkpoint.stats.model_dump(mode="json"),
        "grid": checkpoint.grid.model_dump(mode="json"),
        "k": checkpoint.k,
        "config_hash": checkpoint.config_hash,
        "extra": checkpoint.extra,
    }
    save_metadata(Path(path), payload)
    logger.info(f"检查点已保存: {path}")
    return Path(path)


def load_checkpoint(path: Path, expected_channels: Optional[int] = None) -> Checkpoint:
    """
    加载检查点

    Args:
        expected_channels: 当前数据的通道数，与检查点不一致时抛出 CheckpointMismatchError
    """
    path = Path(path)
    try:
        payload = load_metadata(path)
    except FileNotFoundError as e:
        raise ScreenIOError(str(e))
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointMismatchError(f"不支持的检查点版本: {payload.get('version')}")
    checkpoint = Checkpoint(
        model=ScorerModel.from_dict(payload["model"]),
        stats=ChannelStats(**payload["channel_stats"]),
        grid=GridConfig(**payload["grid"]),
        k=int(payload["k"]),
        config_hash=payload["config_hash"],
        extra=payload.get("extra", {}),
    )
    if expected_channels is not None and checkpoint.channels != expected_channels:
        raise CheckpointMismatchError(
            f"检查点通道数 {checkpoint.channels} 与数据通道数 {expected_channels} 不一致"
        )
    return checkpoint
