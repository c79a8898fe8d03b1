"""
细胞核计数
DNA染色通道上做 Otsu 阈值 + 距离变换 + 分水岭分割，统计细胞核数量并剔除空样本。
"""

from __future__ import annotations

import logging
from typing import Dict, List, Mapping, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage as ndi
from skimage.feature import peak_local_max
from skimage.filters import threshold_otsu
from skimage.measure import regionprops
from skimage.segmentation import watershed

from shared.data_access.manifest_loader import Manifest, POSITIVE
from shared.utilities.errors import DimensionMismatchError, MissingCountError

logger = logging.getLogger(__name__)

OTSU_BINS = 256
DEFAULT_MIN_AREA = 20
DEFAULT_SEED_RADIUS = 3


class NucleusCountResult(BaseModel):
    """单幅图像的细胞核计数结果"""
    model_config = ConfigDict(frozen=True)

    count: int = Field(..., ge=0, description="细胞核数量")
    centroids: Tuple[Tuple[float, float], ...] = Field(default_factory=tuple, description="强度加权质心 (row, col)")
    threshold: float = Field(..., description="Otsu阈值")

    def to_row(self, sample_id: str) -> Dict[str, object]:
        return {"sample_id": sample_id, "count": self.count, "threshold": self.threshold}


def otsu_threshold(values: np.ndarray) -> float:
    """256 bin 直方图上的 Otsu 阈值（与位深无关）"""
    return float(threshold_otsu(np.asarray(values, dtype=np.float64), nbins=OTSU_BINS))


def count_nuclei(
    dna_channel: np.ndarray,
    min_area: int = DEFAULT_MIN_AREA,
    seed_radius: int = DEFAULT_SEED_RADIUS,
) -> NucleusCountResult:
    """
    统计DNA通道中的细胞核

    Args:
        dna_channel: 单通道二维图像
        min_area: 面积小于该值（像素）的连通域被丢弃
        seed_radius: 距离变换局部极大值的抑制半径

    Returns:
        NucleusCountResult；空白图像返回 count=0
    """
    image = np.asarray(dna_channel, dtype=np.float64)
    if image.ndim != 2:
        raise DimensionMismatchError(f"细胞核计数需要单通道二维图像: {image.shape}")
    if min_area < 1:
        raise ValueError(f"min_area 必须 >= 1: {min_area}")

    low, high = float(image.min()), float(image.max())
    if high <= low:
        return NucleusCountResult(count=0, centroids=(), threshold=low)

    threshold = otsu_threshold(image)
    foreground = image > threshold
    if not foreground.any():
        return NucleusCountResult(count=0, centroids=(), threshold=threshold)

    distance = ndi.distance_transform_edt(foreground)
    components, _ = ndi.label(foreground)
    peaks = peak_local_max(distance, min_distance=seed_radius, labels=components, exclude_border=False)
    peak_mask = np.zeros(image.shape, dtype=bool)
    peak_mask[tuple(peaks.T)] = True
    # 相邻的平台极大值合并为同一个种子
    markers, _ = ndi.label(peak_mask)
    labels = watershed(-distance, markers, mask=foreground)

    centroids: List[Tuple[float, float]] = []
    for region in regionprops(labels, intensity_image=image):
        if region.area < min_area:
            continue
        row, col = region.centroid_weighted
        centroids.append((float(row), float(col)))

    return NucleusCountResult(count=len(centroids), centroids=tuple(centroids), threshold=threshold)


def filter_empty_samples(manifest: Manifest, counts: Mapping[str, NucleusCountResult]) -> Manifest:
    """剔除细胞核计数为0的样本"""
    kept = []
    for record in manifest.records:
        if record.sample_id not in counts:
            raise MissingCountError(record.sample_id)
        if counts[record.sample_id].count == 0:
            logger.info(f"样本 {record.sample_id} 未检测到细胞，已剔除")
            continue
        kept.append(record)
    if len(kept) == len(manifest.records):
        return manifest
    logger.info(f"空样本剔除: {len(manifest.records) - len(kept)} 条, 剩余 {len(kept)} 条")
    return manifest.with_records(kept)


def counts_table(counts: Mapping[str, NucleusCountResult]) -> pd.DataFrame:
    """导出 sample_id,count,threshold 表格"""
    rows = [counts[sid].to_row(sid) for sid in sorted(counts)]
    return pd.DataFrame(rows, columns=["sample_id", "count", "threshold"])


def summarize_counts(manifest: Manifest, counts: Mapping[str, NucleusCountResult]) -> Dict[str, Dict[str, float]]:
    """按实验条件和二分类类别汇总细胞核数量（均值/中位数/样本数）"""
    rows = []
    for record in manifest.records:
        if record.sample_id not in counts:
            raise MissingCountError(record.sample_id)
        label = manifest.label_of(record)
        group = "treated" if record.is_treated else record.condition.value
        if record.is_treated:
            klass = "treated"
        elif label is None:
            klass = "unlabeled"
        else:
            klass = "infected" if label == POSITIVE else "non_infected"
        rows.append({"group": group, "klass": klass, "count": counts[record.sample_id].count})

    summary: Dict[str, Dict[str, float]] = {}
    if not rows:
        return summary
    table = pd.DataFrame(rows)
    for column in ("group", "klass"):
        stats = table.groupby(column)["count"].agg(["size", "mean", "median"])
        for name, row in stats.iterrows():
            summary[str(name)] = {"n": int(row["size"]), "mean": float(row["mean"]), "median": float(row["median"])}
    return summary
