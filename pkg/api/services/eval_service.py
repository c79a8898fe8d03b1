"""
评估服务 - 未给药测试集上的 AP、PR 曲线、定位 AUC 与基线对比
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

from shared.analysis_tools.report_charts import plot_pr_curve
from shared.data_access.manifest_loader import Manifest, Split
from shared.data_processors.image_processor import ChannelStats, GridConfig
from shared.data_processors.synth_screen import load_instance_labels
from shared.mil.bag_inference import KValue, PatchScoreSet, bag_score, predict_bag, sample_infection_probability
from shared.mil.metrics import PrecisionRecall, evaluate_ap, localization_auc
from shared.mil.scorer import ScorerModel
from shared.mil.trainer import BagDataset, exhaustive_inference
from shared.utilities.errors import DegenerateLabelsError
from shared.utilities.file_utils import save_metadata, save_table

from ..models import RunConfig, StageName, StageResult
from .base_service import BaseService
from .train_service import TrainService

logger = logging.getLogger(__name__)

SCORE_COLUMNS = ["sample_id", "label", "bag_score", "predicted", "z"]


class EvalService(BaseService):
    """评估阶段"""

    stage = StageName.EVAL

    def ground_truth_path(self) -> Path:
        return self.run_dir / StageName.SYNTH.directory / "ground_truth.csv"

    def config_subset(self) -> Dict[str, Any]:
        subset = {
            "eta": self.config.train.eta,
            "eval": self.config.eval.model_dump(mode="json"),
        }
        if self.config.eval.compare_baselines:
            subset["baseline_train"] = TrainService(self.config).config_subset()
        return subset

    def input_files(self) -> List[Path]:
        files = list(self.preprocessed_paths().values()) + [self.checkpoint_path()]
        if self.ground_truth_path().exists():
            files.append(self.ground_truth_path())
        return files

    # ------------------------------------------------------------------
    def score_table(self, dataset: BagDataset, score_sets: List[PatchScoreSet]) -> pd.DataFrame:
        eta = self.config.train.eta
        rows = [
            {
                "sample_id": s.sample_id,
                "label": int(label),
                "bag_score": bag_score(s),
                "predicted": predict_bag(s, eta),
                "z": sample_infection_probability(s),
            }
            for s, label in zip(score_sets, dataset.labels)
        ]
        return pd.DataFrame(rows, columns=SCORE_COLUMNS)

    def localization(self, score_sets: List[PatchScoreSet], grid: GridConfig) -> Optional[float]:
        """有合成真值且网格一致时计算实例级定位 AUC"""
        path = self.ground_truth_path()
        if not path.exists() or self.config.synth is None:
            return None
        synth_grid = self.config.synth.grid
        if (grid.patch_size, grid.stride) != (synth_grid.patch_size, synth_grid.stride):
            logger.warning(f"检查点网格 {grid} 与合成真值网格 {synth_grid} 不同，跳过定位评估")
            return None
        instance_labels = load_instance_labels(path)
        covered = [s for s in score_sets if s.sample_id in instance_labels]
        try:
            return localization_auc(covered, instance_labels)
        except DegenerateLabelsError as e:
            logger.warning(f"跳过定位评估: {e}")
            return None

    def baseline_curves(self, manifest: Manifest, stats: ChannelStats) -> Dict[str, PrecisionRecall]:
        """用相同设置训练 k=N 切块模型与整图模型"""
        trainer = TrainService(self.config)
        train_records = manifest.by_split(Split.TRAIN)
        size = min(trainer.load_normalized(train_records[0], stats).shape[1:])
        variants = {
            "patch_based": (self.config.grid, self.config.train.model_copy(update={"k": "all"})),
            "whole_image": (GridConfig.whole_image(size), self.config.train.model_copy(update={"k": 1})),
        }
        curves: Dict[str, PrecisionRecall] = {}
        for name, (grid, train_cfg) in variants.items():
            logger.info(f"训练基线 {name}: 切块 {grid.patch_size}, k={train_cfg.k}")
            train_set = self.build_dataset(manifest, train_records, stats, grid)
            val_set = self.build_dataset(manifest, manifest.by_split(Split.VALIDATION), stats, grid)
            test_set = self.build_dataset(manifest, manifest.by_split(Split.UNTREATED_TEST), stats, grid)
            result, _ = trainer.fit_model(train_cfg, train_set, val_set)
            curves[name] = self.evaluate(result.model, test_set, train_cfg.k)[1]
        return curves

    def evaluate(self, model: ScorerModel, dataset: BagDataset, k: KValue) -> Tuple[List[PatchScoreSet], PrecisionRecall]:
        score_sets = exhaustive_inference(model, dataset, k, self.config.train.chunk_size, self.config.jobs)
        return score_sets, evaluate_ap([bag_score(s) for s in score_sets], dataset.labels)

    def run_stage(self) -> Dict[str, Path]:
        out_dir = self.stage_dir()
        manifest, _ = self.load_preprocessed()
        checkpoint = self.load_trained(manifest)
        stats = checkpoint.stats

        test_set = self.require_nonempty(
            self.build_dataset(manifest, manifest.by_split(Split.UNTREATED_TEST), stats, checkpoint.grid),
            Split.UNTREATED_TEST.value,
        )
        score_sets, pr = self.evaluate(checkpoint.model, test_set, checkpoint.k)
        logger.info(f"UntreatedTest AP={pr.average_precision:.4f}（随机参考 {pr.positive_fraction:.4f}）")

        curves = {f"k={checkpoint.k}": pr}
        baselines: Dict[str, float] = {}
        if self.config.eval.compare_baselines:
            for name, curve in self.baseline_curves(manifest, stats).items():
                curves[name] = curve
                baselines[name] = curve.average_precision

        outputs = {
            "test_scores": save_table(out_dir / "test_scores.csv", self.score_table(test_set, score_sets)),
            "pr_curve": save_table(out_dir / "pr_curve.csv", pr.curve_table()),
            "pr_plot": plot_pr_curve(out_dir / "pr_curve.png", curves, title="UntreatedTest"),
            "eval": out_dir / "eval.json",
        }
        save_metadata(outputs["eval"], {
            "k": checkpoint.k,
            "validation_ap": checkpoint.extra.get("best_val_ap"),
            "test_ap": pr.average_precision,
            "random_ap": pr.positive_fraction,
            "n_test": len(test_set),
            "localization_auc": self.localization(score_sets, checkpoint.grid),
            "baselines": baselines,
        })
        return outputs


def eval_service(config: RunConfig, use_cache: bool = True) -> StageResult:
    return EvalService(config).execute(use_cache=use_cache)
