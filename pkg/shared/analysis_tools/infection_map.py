"""
感染图

把重叠切块的 μ 按幂加权平均聚合到像素：
    A(l,m) = Σ μ^(1+α) / Σ μ^α   （对覆盖该像素的所有切块）
然后做高斯低通平滑（反射边界，3σ 截断）。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter

from shared.data_access.image_io import write_channel, write_rgb
from shared.data_processors.image_processor import GridConfig
from shared.mil.bag_inference import PatchScoreSet
from shared.utilities.errors import GridMismatchError
from shared.utilities.file_utils import ensure_directory

logger = logging.getLogger(__name__)

TRUNCATE = 3.0


@dataclass(frozen=True)
class InfectionMap:
    """逐像素感染概率场"""
    values: np.ndarray
    alpha: float
    sigma: float
    sample_id: str

    @property
    def shape(self):
        return self.values.shape


def _powered(mu: np.ndarray, alpha: float) -> np.ndarray:
    # 约定 0^α = 0
    return np.where(mu > 0, np.power(np.maximum(mu, 0.0), alpha), 0.0)


def power_weighted_mean(values: Sequence[float], alpha: float) -> float:
    """单个像素覆盖集合上的 Σμ^(1+α)/Σμ^α，全零集合返回0"""
    mu = np.asarray(values, dtype=np.float64)
    weights = _powered(mu, alpha)
    total = weights.sum()
    return float((mu * weights).sum() / total) if total > 0 else 0.0


def build_infection_map(scores: PatchScoreSet, grid: GridConfig, alpha: float = 0.2, sigma: float = 60.0) -> InfectionMap:
    """
    由切块分数构建感染图

    Args:
        scores: 覆盖全部 N 个切块的分数（需带 grid_shape）
        alpha: 幂加权指数，(0,1)
        sigma: 高斯平滑标准差（像素），0 表示不平滑
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha 必须位于 (0,1): {alpha}")
    if sigma < 0:
        raise ValueError(f"sigma 必须 >= 0: {sigma}")
    if scores.grid_shape is None:
        raise GridMismatchError(f"样本 {scores.sample_id} 的分数缺少网格信息")
    rows, cols = scores.grid_shape
    if rows * cols != scores.n_patches:
        raise GridMismatchError(f"网格 {scores.grid_shape} 与切块数 {scores.n_patches} 不符")

    height, width = grid.image_shape(scores.grid_shape)
    size = grid.patch_size
    mu = scores.scores
    weights = _powered(mu, alpha)
    numerator = np.zeros((height, width))
    denominator = np.zeros((height, width))
    # 固定按切块序号累加，保证与输入顺序无关
    for j in range(scores.n_patches):
        top, left = grid.origin(j, scores.grid_shape)
        numerator[top:top + size, left:left + size] += mu[j] * weights[j]
        denominator[top:top + size, left:left + size] += weights[j]
    values = np.divide(numerator, denominator, out=np.zeros_like(numerator), where=denominator > 0)

    if sigma > 0:
        values = gaussian_filter(values, sigma=sigma, mode="reflect", truncate=TRUNCATE)
    values = np.clip(values, 0.0, 1.0)
    values.setflags(write=False)
    return InfectionMap(values=values, alpha=alpha, sigma=sigma, sample_id=scores.sample_id)


def infected_fraction(infection_map: InfectionMap, eta: float = 0.5) -> float:
    """感染图中 >= η 的像素比例"""
    return float(np.mean(infection_map.values >= eta))


def render_overlay(channel: np.ndarray, infection_map: InfectionMap) -> np.ndarray:
    """
    反相灰度通道叠加红色感染图

    Returns:
        [H,W,3]，红色不透明度等于感染图取值
    """
    channel = np.asarray(channel, dtype=np.float64)
    if channel.shape != infection_map.values.shape:
        raise GridMismatchError(f"通道尺寸 {channel.shape} 与感染图 {infection_map.values.shape} 不一致")
    base = 1.0 - np.clip(channel, 0.0, 1.0)
    a = infection_map.values
    keep = base * (1.0 - a)
    return np.stack([keep + a, keep, keep], axis=-1)


def save_map_png(path: Path, infection_map: InfectionMap) -> Path:
    """8位灰度PNG（value×255，四舍五入到偶数）"""
    return write_channel(Path(path), infection_map.values, bit_depth=8)


def save_overlay_png(path: Path, channel: np.ndarray, infection_map: InfectionMap) -> Path:
    return write_rgb(Path(path), render_overlay(channel, infection_map))


def save_map_csv(path: Path, infection_map: InfectionMap, float_format: Optional[str] = "%.10g") -> Path:
    """数值导出（无表头，逐行像素）"""
    path = Path(path)
    ensure_directory(path.parent)
    pd.DataFrame(infection_map.values).to_csv(path, header=False, index=False, float_format=float_format, lineterminator="\n")
    return path
