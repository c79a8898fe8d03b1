"""
包级推断

top-k 选择、包标签预测 ŷ = I(m(M,k) >= η) 与样本感染概率 z（top-k 分数的中位数）。
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from shared.utilities.errors import RankOutOfRangeError

KValue = Union[int, str]


def resolve_k(k: KValue, n_patches: int) -> int:
    """k="all" 表示 k=N（基于切块的基线模型）"""
    if isinstance(k, str):
        if k.lower() != "all":
            raise ValueError(f"无法识别的 k: {k}")
        return n_patches
    return int(k)


def kth_greatest(values: Sequence[float], r: int) -> float:
    """降序排列后的第 r 个元素（r 从1开始）"""
    values = np.asarray(values, dtype=np.float64).ravel()
    if r < 1 or r > values.size:
        raise RankOutOfRangeError(f"秩 r={r} 超出范围 [1, {values.size}]")
    return float(np.partition(values, values.size - r)[values.size - r])


def select_top_k(scores: Sequence[float], k: int) -> np.ndarray:
    """
    分数最高的 k 个切块序号（按秩排列）

    同分按切块序号升序（稳定排序）。
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if k < 1 or k > scores.size:
        raise RankOutOfRangeError(f"k={k} 超出范围 [1, {scores.size}]")
    return np.argsort(-scores, kind="stable")[:k]


@dataclass(frozen=True)
class PatchScoreSet:
    """单个样本所有切块的 μ 及 top-k 记录"""
    sample_id: str
    scores: np.ndarray
    k: int
    top_k: Tuple[int, ...]
    grid_shape: Optional[Tuple[int, int]] = None

    @classmethod
    def build(
        cls,
        sample_id: str,
        scores: Sequence[float],
        k: KValue,
        grid_shape: Optional[Tuple[int, int]] = None,
    ) -> "PatchScoreSet":
        scores = np.asarray(scores, dtype=np.float64).ravel().copy()
        if scores.size == 0:
            raise RankOutOfRangeError(f"样本 {sample_id} 没有切块分数")
        if np.any(~np.isfinite(scores)) or np.any(scores <= 0.0) or np.any(scores >= 1.0):
            raise ValueError(f"样本 {sample_id} 的切块分数必须位于 (0,1)")
        if grid_shape is not None and grid_shape[0] * grid_shape[1] != scores.size:
            raise ValueError(f"网格 {grid_shape} 与切块数 {scores.size} 不符")
        k = resolve_k(k, scores.size)
        if k < 1:
            raise RankOutOfRangeError(f"k 必须 >= 1: {k}")
        scores.setflags(write=False)
        top = select_top_k(scores, min(k, scores.size))
        return cls(sample_id=sample_id, scores=scores, k=k, top_k=tuple(int(i) for i in top), grid_shape=grid_shape)

    @property
    def n_patches(self) -> int:
        return int(self.scores.size)


def bag_score(scores: PatchScoreSet) -> float:
    """连续包分数 m(M,k)"""
    return kth_greatest(scores.scores, scores.k)


def predict_bag(scores: PatchScoreSet, eta: float) -> int:
    """包中至少 k 个切块 μ >= η 时判为感染"""
    return int(bag_score(scores) >= eta)


def sample_infection_probability(scores: PatchScoreSet) -> float:
    """top-k 切块 μ 的中位数（偶数个取中间两数均值）"""
    return float(np.median(scores.scores[list(scores.top_k)]))
