"""
评估指标：包级平均精度（AP）与实例级定位 AUC
"""

from __future__ import annotations

import logging
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from sklearn.metrics import average_precision_score, precision_recall_curve, roc_auc_score

from shared.mil.bag_inference import PatchScoreSet
from shared.utilities.errors import DegenerateLabelsError, ShapeMismatchError

logger = logging.getLogger(__name__)


class PrecisionRecall(BaseModel):
    """AP 与 PR 曲线"""
    average_precision: float = Field(..., description="平均精度")
    precision: list = Field(default_factory=list, description="精度")
    recall: list = Field(default_factory=list, description="召回率")
    thresholds: list = Field(default_factory=list, description="阈值")
    positive_fraction: float = Field(..., description="随机分类器参考AP（阳性比例）")

    def curve_table(self) -> pd.DataFrame:
        # precision/recall 比阈值多一个端点
        thresholds = list(self.thresholds) + [float("nan")]
        return pd.DataFrame({"threshold": thresholds, "precision": self.precision, "recall": self.recall})


def _check_labels(labels: np.ndarray) -> None:
    unique = set(np.unique(labels).tolist())
    if not unique <= {0, 1}:
        raise ValueError(f"标签必须为0/1: {sorted(unique)}")
    if len(unique) < 2:
        raise DegenerateLabelsError("评估需要同时包含阳性与阴性标签")


def evaluate_ap(predictions: Sequence[float], labels: Sequence[int]) -> PrecisionRecall:
    """
    由连续包分数 m(M_i,k) 计算平均精度

    AP = Σ (R_n - R_{n-1}) P_n，阶梯插值。
    """
    scores = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape:
        raise ShapeMismatchError(f"分数 {scores.shape} 与标签 {labels.shape} 数量不一致")
    _check_labels(labels)
    precision, recall, thresholds = precision_recall_curve(labels, scores)
    ap = float(average_precision_score(labels, scores))
    return PrecisionRecall(
        average_precision=ap,
        precision=precision.tolist(),
        recall=recall.tolist(),
        thresholds=thresholds.tolist(),
        positive_fraction=float(labels.mean()),
    )


def localization_auc(score_sets: Sequence[PatchScoreSet], instance_labels: Mapping[str, Sequence[int]]) -> float:
    """实例级（切块）μ 相对于真实切块标签的 ROC AUC"""
    scores, labels = [], []
    for score_set in score_sets:
        truth = np.asarray(instance_labels[score_set.sample_id], dtype=int)
        if truth.shape != score_set.scores.shape:
            raise ShapeMismatchError(f"样本 {score_set.sample_id} 的切块标签数量与分数不一致")
        scores.append(score_set.scores)
        labels.append(truth)
    if not scores:
        raise DegenerateLabelsError("没有可用于定位评估的样本")
    labels_all = np.concatenate(labels)
    _check_labels(labels_all)
    auc = float(roc_auc_score(labels_all, np.concatenate(scores)))
    logger.info(f"定位 AUC: {auc:.4f}（{labels_all.size} 个切块）")
    return auc
