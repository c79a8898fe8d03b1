"""
剂量-效应趋势拟合（仅用于展示）

f(x) = 1 / (1 + exp(-s (x - m)))，x 为 log10 浓度。
"""

from __future__ import annotations

import logging
import warnings
from typing import Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import OptimizeWarning, curve_fit
from scipy.special import expit

from shared.utilities.errors import DegenerateDataError

logger = logging.getLogger(__name__)

N_STARTS = 5


class LogisticFit(BaseModel):
    midpoint: float = Field(..., description="中点 m（log10 µM）")
    slope: float = Field(..., description="斜率 s")
    rmse: float = Field(..., description="均方根残差")

    def predict(self, x: np.ndarray) -> np.ndarray:
        return logistic(np.asarray(x, dtype=np.float64), self.midpoint, self.slope)


def logistic(x: np.ndarray, midpoint: float, slope: float) -> np.ndarray:
    return expit(slope * (x - midpoint))


def fit_logistic(doses: Sequence[float], scores: Sequence[float]) -> LogisticFit:
    """
    最小二乘拟合逻辑曲线

    Levenberg-Marquardt（阻尼高斯-牛顿），中点在剂量范围内取5个起点，返回残差最小者。

    Args:
        doses: log10 浓度
        scores: 剂量分数 e，[0,1]
    """
    x = np.asarray(doses, dtype=np.float64)
    y = np.asarray(scores, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("剂量与分数数量不一致")
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("分数必须位于 [0,1]")
    if np.unique(x).size < 3:
        raise DegenerateDataError(f"至少需要3个不同剂量，实际 {np.unique(x).size} 个")
    if np.ptp(y) == 0:
        raise DegenerateDataError("分数为常数，中点不可辨识")

    span = max(np.ptp(x), 1e-12)
    direction = 1.0 if np.corrcoef(x, y)[0, 1] >= 0 else -1.0
    best = None
    for m0 in np.linspace(x.min(), x.max(), N_STARTS):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", OptimizeWarning)
                warnings.simplefilter("ignore", RuntimeWarning)
                params, _ = curve_fit(logistic, x, y, p0=(m0, direction * 4.0 / span), method="lm", maxfev=5000)
        except RuntimeError:
            continue
        if not np.all(np.isfinite(params)):
            continue
        rmse = float(np.sqrt(np.mean(np.square(logistic(x, *params) - y))))
        if best is None or rmse < best.rmse:
            best = LogisticFit(midpoint=float(params[0]), slope=float(params[1]), rmse=rmse)
    if best is None:
        raise DegenerateDataError("逻辑曲线拟合未收敛")
    return best
