"""
k 值选择服务 - 每个候选 k 训练一个模型，按泊松理论感染比例选 k，并统计有效药物在各 k 下的复现率
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple

from shared.analysis_tools.efficacy_analysis import score_screen, treatment_recurrence
from shared.analysis_tools.k_selection import candidate_k_report, candidate_ks
from shared.data_access.checkpoint_store import Checkpoint
from shared.data_access.manifest_loader import Split
from shared.mil.scorer import ScorerModel
from shared.mil.trainer import BagDataset
from shared.utilities.file_utils import save_metadata, save_table

from ..models import RunConfig, StageName, StageResult
from .base_service import BaseService
from .score_service import sample_scores_table
from .train_service import TrainService

logger = logging.getLogger(__name__)


class KSelectionService(BaseService):
    """k 值选择阶段"""

    stage = StageName.SELECT_K

    def config_subset(self) -> Dict[str, Any]:
        return {
            "train": TrainService(self.config).config_subset(),
            "select_k": self.config.select_k.model_dump(mode="json"),
            "maps": {"alpha": self.config.maps.alpha, "sigma": self.config.maps.sigma},
            "efficacy": self.config.efficacy.model_dump(mode="json"),
        }

    def input_files(self) -> List[Path]:
        return list(self.preprocessed_paths().values())

    def train_candidates(self) -> Tuple[Dict[int, ScorerModel], BagDataset]:
        trainer = TrainService(self.config)
        train_set, val_set, _ = trainer.load_datasets()
        self.require_nonempty(val_set, Split.VALIDATION.value)
        ks = candidate_ks(train_set.n_patches, self.config.select_k.candidates)
        logger.info(f"候选 k: {ks}（每个样本 {train_set.n_patches} 个切块）")
        models: Dict[int, ScorerModel] = {}
        for k in ks:
            logger.info(f"训练候选模型 k={k}")
            result, _ = trainer.fit_model(self.config.train.model_copy(update={"k": k}), train_set, val_set)
            models[k] = result.model
        return models, val_set

    def run_stage(self) -> Dict[str, Path]:
        out_dir = self.stage_dir()
        settings = self.config.select_k
        models, val_set = self.train_candidates()
        report = candidate_k_report(
            models,
            val_set,
            moi=settings.moi,
            eta=self.config.train.eta,
            alpha=self.config.maps.alpha,
            sigma=self.config.maps.sigma,
            tie_tolerance=settings.tie_tolerance,
            chunk_size=self.config.train.chunk_size,
            jobs=self.config.jobs,
        )

        # 每个候选模型对给药样本评分，统计有效集合的复现率
        manifest, stats = self.load_preprocessed()
        treated = sorted(manifest.by_split(Split.TREATED_TEST), key=lambda r: r.sample_id)
        effective_sets: Dict[int, List[str]] = {}
        for k, model in models.items():
            checkpoint = Checkpoint(model=model, stats=stats, grid=self.config.grid, k=k, config_hash="")
            samples = sample_scores_table(treated, self.score_records(checkpoint, treated))
            _, ranked = score_screen(samples, level=self.config.efficacy.confidence, zeta=self.config.efficacy.zeta)
            effective_sets[k] = ranked.effective_set

        outputs = {
            "k_report": save_table(out_dir / "k_report.csv", report.table()),
            "recurrence": save_table(out_dir / "recurrence.csv", treatment_recurrence(effective_sets)),
            "k_selection": out_dir / "k_selection.json",
        }
        save_metadata(outputs["k_selection"], {
            "flagged_k": report.flagged_k,
            "target_fraction": report.target_fraction,
            "moi": settings.moi,
            "effective_sets": {str(k): v for k, v in sorted(effective_sets.items())},
        })
        logger.info(f"选中 k={report.flagged_k}")
        return outputs


def k_selection_service(config: RunConfig, use_cache: bool = True) -> StageResult:
    return KSelectionService(config).execute(use_cache=use_cache)
