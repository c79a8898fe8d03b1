"""
药效评分

- 剂量层面：重复孔感染概率 z 的中位数做符号检验置信区间，e = 1 - 上界；
- 药物层面：存在 e >= ζ 的剂量时取这些剂量分数的中位数，否则取全部剂量的中位数；
- 按 e_t 降序排名，e_t >= ζ 的药物构成有效集合。
"""

from __future__ import annotations

import logging
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import binom

from shared.utilities.errors import EmptyInputError

logger = logging.getLogger(__name__)

DOSE_COLUMNS = ["treatment", "concentration", "n", "beta", "ci_lo", "ci_hi", "coverage", "e", "flag", "dose_effective"]
TREATMENT_COLUMNS = ["treatment", "e_t", "effective", "rank"]
FLAG_OK = "ok"
FLAG_INSUFFICIENT = "insufficient"


class SignTestInterval(BaseModel):
    """中位数的符号检验置信区间"""
    model_config = ConfigDict(frozen=True)

    lower: float
    upper: float
    coverage: float = Field(..., description="实际覆盖概率")
    d: int = Field(..., description="次序统计量下标")
    insufficient: bool = Field(False, description="d=1 也达不到置信水平")


class DoseGroup(BaseModel):
    """单个 (药物, 浓度) 的重复孔及其剂量分数"""
    model_config = ConfigDict(frozen=True)

    treatment: str = Field(..., description="药物名称")
    concentration: float = Field(..., gt=0, description="浓度（µM）")
    replicates: Tuple[float, ...] = Field(..., min_length=1, description="重复孔感染概率 z")
    beta: float = Field(..., description="中位数点估计")
    ci: SignTestInterval
    e: float = Field(..., ge=0, le=1, description="剂量分数 e = 1 - 上界")

    def to_row(self, zeta: float) -> Dict[str, object]:
        return {
            "treatment": self.treatment,
            "concentration": self.concentration,
            "n": len(self.replicates),
            "beta": self.beta,
            "ci_lo": self.ci.lower,
            "ci_hi": self.ci.upper,
            "coverage": self.ci.coverage,
            "e": self.e,
            "flag": FLAG_INSUFFICIENT if self.ci.insufficient else FLAG_OK,
            "dose_effective": bool(self.e >= zeta),
        }


class TreatmentScore(BaseModel):
    """药物层面分数"""
    model_config = ConfigDict(frozen=True)

    treatment: str
    dose_scores: Dict[float, float] = Field(default_factory=dict, description="浓度 -> e")
    e_t: float = Field(..., description="聚合分数")
    effective: bool


class RankedTreatments(BaseModel):
    ordered: List[TreatmentScore] = Field(default_factory=list)
    effective_set: List[str] = Field(default_factory=list)


def sign_coverage(n: int, d: int) -> float:
    """区间 (x_(d), x_(n+1-d)) 的覆盖概率 1 - 2·BinomCDF(d-1; n, 1/2)"""
    return float(1.0 - 2.0 * binom.cdf(d - 1, n, 0.5))


def sign_test_median_ci(values: Sequence[float], level: float = 0.95) -> SignTestInterval:
    """
    中位数的精确符号检验置信区间

    取满足覆盖概率 >= level 的最大 d；d=1 仍不满足时返回 (min, max) 并标记不足。
    """
    if not 0 < level < 1:
        raise ValueError(f"置信水平必须位于 (0,1): {level}")
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    if n == 0:
        raise EmptyInputError("符号检验需要至少一个样本")

    best = None
    for d in range(1, (n + 1) // 2 + 1):
        coverage = sign_coverage(n, d)
        if coverage >= level:
            best = (d, coverage)
        else:
            break
    if best is None:
        return SignTestInterval(lower=float(x[0]), upper=float(x[-1]), coverage=sign_coverage(n, 1), d=1, insufficient=True)
    d, coverage = best
    return SignTestInterval(lower=float(x[d - 1]), upper=float(x[n - d]), coverage=coverage, d=d)


def dose_efficacy(values: Sequence[float], level: float = 0.95) -> float:
    """e = 1 - 中位数置信区间上界"""
    return float(1.0 - sign_test_median_ci(values, level).upper)


def build_dose_group(treatment: str, concentration: float, values: Sequence[float], level: float = 0.95) -> DoseGroup:
    z = np.asarray(values, dtype=np.float64)
    if z.size == 0:
        raise EmptyInputError(f"{treatment}@{concentration} 没有重复孔")
    if np.any(z < 0) or np.any(z > 1):
        raise ValueError(f"{treatment}@{concentration} 的感染概率必须位于 [0,1]")
    ci = sign_test_median_ci(z, level)
    return DoseGroup(
        treatment=treatment,
        concentration=concentration,
        replicates=tuple(float(v) for v in z),
        beta=float(np.median(z)),
        ci=ci,
        e=float(1.0 - ci.upper),
    )


def treatment_efficacy(dose_scores: Mapping[float, float], zeta: float = 0.5, treatment: str = "") -> TreatmentScore:
    """药物层面聚合：>= ζ 的剂量分数中位数，否则全部剂量分数中位数"""
    if not dose_scores:
        raise EmptyInputError(f"药物 {treatment} 没有剂量分数")
    scores = np.asarray(list(dose_scores.values()), dtype=np.float64)
    above = scores[scores >= zeta]
    e_t = float(np.median(above if above.size else scores))
    return TreatmentScore(treatment=treatment, dose_scores=dict(dose_scores), e_t=e_t, effective=bool(e_t >= zeta))


def rank_treatments(scores: Iterable[TreatmentScore]) -> RankedTreatments:
    """按 e_t 降序、药物名升序排名"""
    ordered = sorted(scores, key=lambda s: (-s.e_t, s.treatment))
    return RankedTreatments(ordered=ordered, effective_set=[s.treatment for s in ordered if s.effective])


def treatment_recurrence(effective_sets: Mapping[object, Iterable[str]], treatments: Optional[Iterable[str]] = None) -> pd.DataFrame:
    """
    各药物在多少个候选模型（不同 k）的有效集合中出现

    Returns:
        treatment, n_models, fraction
    """
    n_models = len(effective_sets)
    names = set(treatments or [])
    for members in effective_sets.values():
        names.update(members)
    rows = []
    for name in sorted(names):
        hits = sum(1 for members in effective_sets.values() if name in set(members))
        rows.append({"treatment": name, "n_models": hits, "fraction": hits / n_models if n_models else 0.0})
    table = pd.DataFrame(rows, columns=["treatment", "n_models", "fraction"])
    return table.sort_values(["fraction", "treatment"], ascending=[False, True], kind="mergesort").reset_index(drop=True)


def score_screen(
    sample_scores: pd.DataFrame,
    level: float = 0.95,
    zeta: float = 0.5,
) -> Tuple[List[DoseGroup], RankedTreatments]:
    """
    由给药样本的 z 计算全部剂量分数与药物排名

    Args:
        sample_scores: 列 sample_id, treatment, concentration, z
    """
    groups: List[DoseGroup] = []
    treatments: List[TreatmentScore] = []
    if sample_scores.empty:
        logger.warning("没有给药样本，药效评分为空")
        return groups, rank_treatments([])
    for treatment, frame in sample_scores.groupby("treatment", sort=True):
        doses: Dict[float, float] = {}
        for concentration, dose_frame in frame.groupby("concentration", sort=True):
            group = build_dose_group(str(treatment), float(concentration), dose_frame.sort_values("sample_id")["z"].tolist(), level)
            groups.append(group)
            doses[float(concentration)] = group.e
        treatments.append(treatment_efficacy(doses, zeta, str(treatment)))
    ranked = rank_treatments(treatments)
    logger.info(f"药效评分完成: {len(treatments)} 种药物, {len(groups)} 个剂量, 有效 {len(ranked.effective_set)} 种")
    return groups, ranked


def doses_table(groups: Sequence[DoseGroup], zeta: float) -> pd.DataFrame:
    return pd.DataFrame([g.to_row(zeta) for g in groups], columns=DOSE_COLUMNS)


def treatments_table(ranked: RankedTreatments) -> pd.DataFrame:
    rows = [
        {"treatment": s.treatment, "e_t": s.e_t, "effective": s.effective, "rank": i}
        for i, s in enumerate(ranked.ordered, start=1)
    ]
    return pd.DataFrame(rows, columns=TREATMENT_COLUMNS)


def hit_recovery(effective_set: Iterable[str], planted_set: Iterable[str]) -> Dict[str, float]:
    """有效集合相对于已知有效药物的精确率与召回率（空集合时记为1）"""
    found, planted = set(effective_set), set(planted_set)
    hits = len(found & planted)
    return {
        "precision": hits / len(found) if found else 1.0,
        "recall": hits / len(planted) if planted else 1.0,
    }
