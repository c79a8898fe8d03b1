"""
药效评分服务 - 给药样本推断、剂量/药物评分、排名与趋势拟合
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from shared.analysis_tools.dose_response import fit_logistic
from shared.analysis_tools.efficacy_analysis import (
    DoseGroup,
    doses_table,
    hit_recovery,
    score_screen,
    treatments_table,
)
from shared.analysis_tools.report_charts import plot_dose_response
from shared.data_access.manifest_loader import SampleRecord, Split
from shared.mil.bag_inference import PatchScoreSet, bag_score, sample_infection_probability
from shared.utilities.errors import DegenerateDataError
from shared.utilities.file_utils import save_metadata, save_table

from ..models import RunConfig, StageName, StageResult
from .base_service import BaseService

logger = logging.getLogger(__name__)

SAMPLE_COLUMNS = ["sample_id", "treatment", "concentration", "bag_score", "z"]
TREND_COLUMNS = ["treatment", "midpoint", "slope", "rmse", "fit"]


def sample_scores_table(records: Sequence[SampleRecord], score_sets: Sequence[PatchScoreSet]) -> pd.DataFrame:
    rows = [
        {
            "sample_id": r.sample_id,
            "treatment": r.treatment,
            "concentration": r.concentration,
            "bag_score": bag_score(s),
            "z": sample_infection_probability(s),
        }
        for r, s in zip(records, score_sets)
    ]
    table = pd.DataFrame(rows, columns=SAMPLE_COLUMNS)
    return table.sort_values(["treatment", "concentration", "sample_id"], kind="mergesort").reset_index(drop=True)


def trends_table(groups: Sequence[DoseGroup]) -> pd.DataFrame:
    """每种药物在 log10 浓度上的逻辑趋势（仅用于展示）"""
    rows = []
    for treatment in sorted({g.treatment for g in groups}):
        own = sorted((g for g in groups if g.treatment == treatment), key=lambda g: g.concentration)
        try:
            fit = fit_logistic(np.log10([g.concentration for g in own]), [g.e for g in own])
            rows.append({"treatment": treatment, "midpoint": fit.midpoint, "slope": fit.slope, "rmse": fit.rmse, "fit": "ok"})
        except DegenerateDataError as e:
            logger.debug(f"药物 {treatment} 无法拟合趋势: {e}")
            rows.append({"treatment": treatment, "midpoint": np.nan, "slope": np.nan, "rmse": np.nan, "fit": "degenerate"})
    return pd.DataFrame(rows, columns=TREND_COLUMNS)


class ScoreService(BaseService):
    """药效评分阶段"""

    stage = StageName.SCORE

    def planted_path(self) -> Path:
        return self.run_dir / StageName.SYNTH.directory / "planted.csv"

    def config_subset(self) -> Dict[str, Any]:
        return {"efficacy": self.config.efficacy.model_dump(mode="json"), "thresholds": self.config.thresholds()}

    def input_files(self) -> List[Path]:
        files = list(self.preprocessed_paths().values()) + [self.checkpoint_path()]
        if self.planted_path().exists():
            files.append(self.planted_path())
        return files

    def planted_effective(self) -> Optional[List[str]]:
        path = self.planted_path()
        if not path.exists():
            return None
        planted = pd.read_csv(path)
        return sorted(planted.loc[planted["planted_effective"].astype(bool), "treatment"].astype(str).unique())

    def run_stage(self) -> Dict[str, Path]:
        out_dir = self.stage_dir()
        settings = self.config.efficacy
        manifest, _ = self.load_preprocessed()
        checkpoint = self.load_trained(manifest)

        records = sorted(manifest.by_split(Split.TREATED_TEST), key=lambda r: r.sample_id)
        samples = sample_scores_table(records, self.score_records(checkpoint, records))
        groups, ranked = score_screen(samples, level=settings.confidence, zeta=settings.zeta)

        outputs = {
            "sample_scores": save_table(out_dir / "sample_scores.csv", samples),
            "doses": save_table(out_dir / "doses.csv", doses_table(groups, settings.zeta)),
            "treatments": save_table(out_dir / "treatments.csv", treatments_table(ranked)),
            "trends": save_table(out_dir / "trends.csv", trends_table(groups)),
            "run_metadata": out_dir / "run_metadata.json",
        }
        if groups:
            outputs["dose_response"] = plot_dose_response(
                out_dir / "dose_response.png", groups, ranked, settings.zeta, top_n=settings.top_n_plot
            )

        metadata: Dict[str, Any] = {
            "thresholds": self.config.thresholds(),
            "k": checkpoint.k,
            "n_treated_samples": len(records),
            "effective_set": ranked.effective_set,
        }
        planted = self.planted_effective()
        if planted is not None:
            metadata["planted_effective"] = planted
            metadata["hit_recovery"] = hit_recovery(ranked.effective_set, planted)
            logger.info(f"命中恢复: {metadata['hit_recovery']}")
        save_metadata(outputs["run_metadata"], metadata)
        return outputs


def score_service(config: RunConfig, use_cache: bool = True) -> StageResult:
    return ScoreService(config).execute(use_cache=use_cache)
