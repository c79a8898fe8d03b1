"""
训练服务 - top-k MIL 训练并保存检查点
"""

import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from shared.data_access.checkpoint_store import Checkpoint, save_checkpoint
from shared.data_access.manifest_loader import Split
from shared.data_processors.image_processor import ChannelStats, GridConfig
from shared.mil.bag_inference import resolve_k
from shared.mil.scorer import ArchitectureSpec, LossConfig, ScorerModel
from shared.mil.trainer import BagDataset, MILTrainer, TrainConfig, TrainingResult
from shared.utilities.file_utils import canonical_hash

from ..models import RunConfig, StageName, StageResult
from .base_service import BaseService

logger = logging.getLogger(__name__)


class TrainService(BaseService):
    """训练阶段"""

    stage = StageName.TRAIN

    def config_subset(self) -> Dict[str, Any]:
        return {
            "grid": self.config.grid.model_dump(mode="json"),
            "train": self.config.train.model_dump(mode="json"),
            "loss": self.config.loss.model_dump(mode="json"),
            "merge_controls": self.config.split.merge_controls,
        }

    def input_files(self) -> List[Path]:
        return list(self.preprocessed_paths().values())

    # ------------------------------------------------------------------
    def load_datasets(self, grid: Optional[GridConfig] = None) -> Tuple[BagDataset, BagDataset, ChannelStats]:
        """读取 Train / Validation 数据集"""
        manifest, stats = self.load_preprocessed()
        train_set = self.require_nonempty(
            self.build_dataset(manifest, manifest.by_split(Split.TRAIN), stats, grid), Split.TRAIN.value
        )
        val_set = self.build_dataset(manifest, manifest.by_split(Split.VALIDATION), stats, grid)
        logger.info(f"训练集 {len(train_set)} 个样本, 验证集 {len(val_set)} 个样本, 每个样本 {train_set.n_patches} 个切块")
        return train_set, val_set, stats

    def loss_config(self, train_set: BagDataset) -> LossConfig:
        n_positive = int(train_set.labels.sum())
        loss_cfg = self.config.loss.resolve(n_positive, len(train_set) - n_positive)
        logger.info(f"类别权重: w+={loss_cfg.w_plus:.4f}, w-={loss_cfg.w_minus:.4f}")
        return loss_cfg

    def fit_model(
        self,
        train_cfg: TrainConfig,
        train_set: BagDataset,
        val_set: BagDataset,
        log_path: Optional[Path] = None,
    ) -> Tuple[TrainingResult, LossConfig]:
        """按给定超参数从头训练一个评分网络（主模型、基线与候选 k 共用）"""
        architecture = ArchitectureSpec(
            in_channels=train_set.channels,
            patch_size=train_set.grid.patch_size,
            conv_channels=train_cfg.conv_channels,
        )
        model = ScorerModel.initialize(architecture, seed=train_cfg.seed)
        loss_cfg = self.loss_config(train_set)
        trainer = MILTrainer(train_cfg, loss_cfg, jobs=self.config.jobs)
        result = trainer.train(model, train_set, val_set if len(val_set) else None, log_path)
        return result, loss_cfg

    def run_stage(self) -> Dict[str, Path]:
        out_dir = self.stage_dir()
        train_set, val_set, stats = self.load_datasets()
        log_path = out_dir / "training_log.csv"
        result, loss_cfg = self.fit_model(self.config.train, train_set, val_set, log_path)

        checkpoint = Checkpoint(
            model=result.model,
            stats=stats,
            grid=self.config.grid,
            k=resolve_k(self.config.train.k, train_set.n_patches),
            config_hash=canonical_hash(self.config_subset()),
            extra={
                "best_epoch": result.best_epoch,
                "best_val_ap": None if math.isnan(result.best_val_ap) else result.best_val_ap,
                "stopped_early": result.stopped_early,
                "w_plus": loss_cfg.w_plus,
                "w_minus": loss_cfg.w_minus,
            },
        )
        return {
            "checkpoint": save_checkpoint(out_dir / "checkpoint.json", checkpoint),
            "training_log": log_path,
        }


def train_service(config: RunConfig, use_cache: bool = True) -> StageResult:
    return TrainService(config).execute(use_cache=use_cache)
