"""
报告图表：PR 曲线与剂量-效应图
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from shared.analysis_tools.dose_response import fit_logistic  # noqa: E402
from shared.analysis_tools.efficacy_analysis import DoseGroup, RankedTreatments  # noqa: E402
from shared.mil.metrics import PrecisionRecall  # noqa: E402
from shared.utilities.errors import DegenerateDataError  # noqa: E402
from shared.utilities.file_utils import ensure_directory  # noqa: E402

logger = logging.getLogger(__name__)


def plot_pr_curve(path: Path, curves: dict, title: str = "Precision-recall") -> Path:
    """
    Args:
        curves: 模型名 -> PrecisionRecall
    """
    path = Path(path)
    ensure_directory(path.parent)
    fig, ax = plt.subplots(figsize=(5, 5))
    reference = None
    for name, pr in curves.items():
        pr: PrecisionRecall
        ax.step(pr.recall, pr.precision, where="post", label=f"{name} (AP={pr.average_precision:.3f})")
        reference = pr.positive_fraction
    if reference is not None:
        ax.axhline(reference, color="lightgrey", linestyle="--", label=f"random (AP={reference:.3f})")
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.legend(loc="lower left")
    ax.grid(True, alpha=0.3)
    plt.tight_layout()
    plt.savefig(path, dpi=120)
    plt.close(fig)
    logger.info(f"PR曲线已保存: {path}")
    return path


def plot_dose_response(
    path: Path,
    groups: Sequence[DoseGroup],
    ranked: RankedTreatments,
    zeta: float,
    top_n: int = 8,
) -> Path:
    """排名靠前药物的剂量分数、重复孔 1-z 散点与逻辑趋势线"""
    path = Path(path)
    ensure_directory(path.parent)
    names = [s.treatment for s in ranked.ordered[:top_n]]
    n_cols = min(4, max(1, len(names)))
    n_rows = max(1, math.ceil(len(names) / n_cols))
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(3.2 * n_cols, 2.8 * n_rows), squeeze=False)

    for ax in axes.ravel()[len(names):]:
        ax.axis("off")
    for ax, name in zip(axes.ravel(), names):
        own = sorted((g for g in groups if g.treatment == name), key=lambda g: g.concentration)
        x = np.log10([g.concentration for g in own])
        e = np.array([g.e for g in own])
        for xi, g in zip(x, own):
            ax.scatter(np.full(len(g.replicates), xi), 1.0 - np.asarray(g.replicates), s=6, color="grey", alpha=0.5)
        ax.scatter(x[e >= zeta], e[e >= zeta], color="tab:green", marker="o", label="effective dose")
        ax.scatter(x[e < zeta], e[e < zeta], color="tab:red", marker="x", label="ineffective dose")
        try:
            fit = fit_logistic(x, e)
            grid = np.linspace(x.min(), x.max(), 100)
            ax.plot(grid, fit.predict(grid), color="black", linewidth=1)
        except DegenerateDataError:
            pass
        ax.axhline(zeta, color="lightgrey", linestyle="--")
        ax.set_ylim(-0.05, 1.05)
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("log10 concentration (µM)", fontsize=8)
        ax.set_ylabel("efficacy score", fontsize=8)
    plt.tight_layout()
    plt.savefig(path, dpi=120)
    plt.close(fig)
    logger.info(f"剂量-效应图已保存: {path}")
    return path
