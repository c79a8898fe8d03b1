"""
k 值选择

对每个候选 k 训练得到的模型，在验证集上计算平均感染像素比例和 AP；
选出比例最接近泊松模型理论值 1-e^(-moi) 的 k，距离相近时取 AP 最高者，仍相同取较小的 k。
"""

from __future__ import annotations

import logging
from typing import Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from shared.analysis_tools.infection_map import build_infection_map, infected_fraction
from shared.data_processors.synth_screen import poisson_infection_probability
from shared.mil.bag_inference import bag_score
from shared.mil.metrics import evaluate_ap
from shared.mil.scorer import ScorerModel
from shared.mil.trainer import BagDataset, exhaustive_inference
from shared.utilities.errors import EmptyInputError

logger = logging.getLogger(__name__)

DEFAULT_CANDIDATES = (1, 2, 3, 5, 10, 15, 25, 49)
TIE_TOLERANCE = 0.05
REPORT_COLUMNS = ["k", "mean_fraction", "target_fraction", "distance", "ap", "flagged"]


class KCandidate(BaseModel):
    k: int = Field(..., ge=1)
    mean_fraction: float = Field(..., description="验证集平均感染像素比例")
    ap: float = Field(..., description="验证集AP")


class KSelectionReport(BaseModel):
    target_fraction: float
    candidates: List[KCandidate]
    flagged_k: int

    def table(self) -> pd.DataFrame:
        rows = [
            {
                "k": c.k,
                "mean_fraction": c.mean_fraction,
                "target_fraction": self.target_fraction,
                "distance": abs(c.mean_fraction - self.target_fraction),
                "ap": c.ap,
                "flagged": c.k == self.flagged_k,
            }
            for c in sorted(self.candidates, key=lambda c: c.k)
        ]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def candidate_ks(n_patches: int, candidates: Sequence[int] = DEFAULT_CANDIDATES) -> List[int]:
    """裁剪到 [1, N] 的候选 k"""
    return sorted({int(k) for k in candidates if 1 <= int(k) <= n_patches})


def select_k(candidates: Sequence[KCandidate], moi: float, tie_tolerance: float = TIE_TOLERANCE) -> KSelectionReport:
    """距离理论比例最近的 k；距离在最小值 + tie_tolerance 内的候选中取 AP 最高者"""
    if not candidates:
        raise EmptyInputError("没有候选 k")
    target = poisson_infection_probability(moi)
    distances = {c.k: abs(c.mean_fraction - target) for c in candidates}
    nearest = min(distances.values())
    close = [c for c in candidates if distances[c.k] <= nearest + tie_tolerance]
    chosen = sorted(close, key=lambda c: (-c.ap, distances[c.k], c.k))[0]
    logger.info(f"k 选择: 目标比例 {target:.4f}, 选中 k={chosen.k} (比例 {chosen.mean_fraction:.4f}, AP {chosen.ap:.4f})")
    return KSelectionReport(target_fraction=target, candidates=list(candidates), flagged_k=chosen.k)


def candidate_k_report(
    models: Mapping[int, ScorerModel],
    val_set: BagDataset,
    moi: float,
    eta: float = 0.5,
    alpha: float = 0.2,
    sigma: float = 60.0,
    tie_tolerance: float = TIE_TOLERANCE,
    chunk_size: int = 256,
    jobs: int = 1,
    positives_only: bool = True,
) -> KSelectionReport:
    """
    逐个候选模型计算验证集平均感染像素比例与 AP，并标记选中的 k

    Args:
        positives_only: 只在感染类验证样本上平均感染比例（MOI 只作用于感染孔）
    """
    if len(val_set) == 0:
        raise EmptyInputError("验证集为空")
    results: Dict[int, KCandidate] = {}
    for k in sorted(models):
        score_sets = exhaustive_inference(models[k], val_set, k, chunk_size, jobs)
        fractions = [
            infected_fraction(build_infection_map(s, val_set.grid, alpha, sigma), eta)
            for s, label in zip(score_sets, val_set.labels)
            if label == 1 or not positives_only
        ]
        if not fractions:
            raise EmptyInputError("验证集中没有感染类样本")
        ap = evaluate_ap([bag_score(s) for s in score_sets], val_set.labels).average_precision
        results[k] = KCandidate(k=k, mean_fraction=float(np.mean(fractions)), ap=ap)
        logger.info(f"候选 k={k}: 平均感染比例 {results[k].mean_fraction:.4f}, AP {ap:.4f}")
    return select_k(list(results.values()), moi, tie_tolerance)
