"""
筛选清单加载与数据集划分

清单为逗号分隔的UTF-8表格，表头固定：
sample_id,plate,well,site,condition,treatment,concentration,split,channel_1..channel_C
空字符串表示缺失。
"""

from __future__ import annotations

import logging
import math
import re
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from shared.utilities.errors import (
    DuplicateSampleIdError,
    InsufficientSamplesError,
    MalformedRowError,
    MissingColumnError,
)
from shared.utilities.file_utils import save_table

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ["sample_id", "plate", "well", "site", "condition", "treatment", "concentration", "split"]
CHANNEL_PATTERN = re.compile(r"^channel_(\d+)$")

POSITIVE = 1
NEGATIVE = 0


class Condition(str, Enum):
    """实验条件枚举"""
    MOCK = "Mock"
    UV_INACTIVATED = "UVInactivated"
    INFECTED = "Infected"


class Split(str, Enum):
    """数据集划分枚举"""
    TRAIN = "Train"
    VALIDATION = "Validation"
    UNTREATED_TEST = "UntreatedTest"
    TREATED_TEST = "TreatedTest"


UNTREATED_SPLITS = (Split.TRAIN, Split.VALIDATION, Split.UNTREATED_TEST)

EXCLUDED_COLUMNS = ["sample_id", "condition", "reason"]
EXCLUDED_NO_NUCLEI = "no_nuclei"
EXCLUDED_UNLABELED = "unlabeled"
EXCLUDED_CLASS_BALANCE = "class_balance"


class SampleRecord(BaseModel):
    """单个孔位/视野图像及其元数据"""
    model_config = ConfigDict(frozen=True)

    sample_id: str = Field(..., min_length=1, description="样本ID")
    plate: str = Field("", description="板号")
    well: str = Field("", description="孔位")
    site: int = Field(1, ge=1, description="视野编号")
    condition: Condition = Field(..., description="实验条件")
    treatment: Optional[str] = Field(None, description="药物名称")
    concentration: Optional[float] = Field(None, gt=0, description="浓度（µM）")
    image_paths: Tuple[str, ...] = Field(..., min_length=1, description="每个通道一个图像路径")
    split: Optional[Split] = Field(None, description="所属数据集")

    @model_validator(mode="after")
    def _check_treatment(self) -> "SampleRecord":
        if (self.treatment is None) != (self.concentration is None):
            raise ValueError("treatment 与 concentration 必须同时存在或同时缺失")
        treated = self.treatment is not None
        if treated and self.condition != Condition.INFECTED:
            raise ValueError("给药样本只能是感染条件")
        if self.split is not None and treated != (self.split == Split.TREATED_TEST):
            raise ValueError("给药样本当且仅当属于 TreatedTest")
        return self

    @property
    def is_treated(self) -> bool:
        return self.treatment is not None


def default_label_rule(merge_controls: bool = True) -> Dict[Condition, Optional[int]]:
    """条件 -> 二分类标签；不合并时UV灭活对照不参与二分类"""
    return {
        Condition.MOCK: NEGATIVE,
        Condition.UV_INACTIVATED: NEGATIVE if merge_controls else None,
        Condition.INFECTED: POSITIVE,
    }


class Manifest(BaseModel):
    """筛选清单（不可变）"""
    model_config = ConfigDict(frozen=True)

    records: Tuple[SampleRecord, ...] = Field(default_factory=tuple, description="样本记录")
    channel_count: int = Field(..., gt=0, description="通道数")
    label_rule: Dict[Condition, Optional[int]] = Field(default_factory=default_label_rule, description="条件到类别的映射")

    @model_validator(mode="after")
    def _check_unique(self) -> "Manifest":
        seen = set()
        for record in self.records:
            if record.sample_id in seen:
                raise ValueError(f"样本ID重复: {record.sample_id}")
            seen.add(record.sample_id)
        return self

    def label_of(self, record: SampleRecord) -> Optional[int]:
        return self.label_rule.get(record.condition)

    def by_split(self, split: Split) -> List[SampleRecord]:
        return [r for r in self.records if r.split == split]

    def by_id(self) -> Dict[str, SampleRecord]:
        return {r.sample_id: r for r in self.records}

    def with_records(self, records: Sequence[SampleRecord]) -> "Manifest":
        return Manifest(records=tuple(records), channel_count=self.channel_count, label_rule=self.label_rule)

    def __len__(self) -> int:
        return len(self.records)


def _channel_columns(columns: Sequence[str]) -> List[str]:
    found = []
    for col in columns:
        match = CHANNEL_PATTERN.match(col)
        if match:
            found.append((int(match.group(1)), col))
    found.sort()
    expected = [f"channel_{i}" for i in range(1, len(found) + 1)]
    names = [col for _, col in found]
    if not names:
        raise MissingColumnError("缺少通道列: channel_1")
    if names != expected:
        missing = sorted(set(expected) - set(names))
        raise MissingColumnError(f"通道列不连续: {missing}")
    return names


def _parse_row(index: int, row: Mapping[str, str], channel_cols: Sequence[str], base_dir: Path) -> SampleRecord:
    try:
        condition = Condition(row["condition"].strip())
    except ValueError:
        raise MalformedRowError(index, f"未知实验条件 '{row['condition']}'")

    concentration: Optional[float] = None
    if row["concentration"].strip():
        try:
            concentration = float(row["concentration"])
        except ValueError:
            raise MalformedRowError(index, f"浓度无法解析 '{row['concentration']}'")
        if not math.isfinite(concentration) or concentration <= 0:
            raise MalformedRowError(index, f"浓度必须为正数 '{row['concentration']}'")

    try:
        site = int(row["site"]) if row["site"].strip() else 1
    except ValueError:
        raise MalformedRowError(index, f"视野编号无法解析 '{row['site']}'")

    split = None
    if row["split"].strip():
        try:
            split = Split(row["split"].strip())
        except ValueError:
            raise MalformedRowError(index, f"未知数据集 '{row['split']}'")

    paths = []
    for col in channel_cols:
        value = row[col].strip()
        if not value:
            raise MalformedRowError(index, f"缺少图像路径 {col}")
        path = Path(value)
        paths.append(str(path if path.is_absolute() else base_dir / path))

    try:
        return SampleRecord(
            sample_id=row["sample_id"].strip(),
            plate=row["plate"].strip(),
            well=row["well"].strip(),
            site=site,
            condition=condition,
            treatment=row["treatment"].strip() or None,
            concentration=concentration,
            image_paths=tuple(paths),
            split=split,
        )
    except ValueError as e:
        raise MalformedRowError(index, str(e))


def load_manifest(path: Path, merge_controls: bool = True) -> Manifest:
    """
    加载筛选清单

    Args:
        path: 清单CSV路径，相对图像路径按清单所在目录解析
        merge_controls: 是否将Mock与UV灭活对照合并为非感染类

    Returns:
        Manifest
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"清单文件不存在: {path}")

    table = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c for c in REQUIRED_COLUMNS if c not in table.columns]
    if missing:
        raise MissingColumnError(f"清单缺少必要列: {missing}")
    channel_cols = _channel_columns(list(table.columns))

    records: List[SampleRecord] = []
    seen: Dict[str, int] = {}
    for index, row in enumerate(table.to_dict(orient="records")):
        record = _parse_row(index, row, channel_cols, path.parent)
        if record.sample_id in seen:
            raise DuplicateSampleIdError(f"样本ID重复: {record.sample_id}（第 {seen[record.sample_id]} 行与第 {index} 行）")
        seen[record.sample_id] = index
        records.append(record)

    logger.info(f"加载清单 {path}: {len(records)} 条记录, {len(channel_cols)} 个通道")
    return Manifest(records=tuple(records), channel_count=len(channel_cols), label_rule=default_label_rule(merge_controls))


def save_manifest(manifest: Manifest, path: Path) -> Path:
    """按固定表头写出清单（图像路径相对清单目录）"""
    path = Path(path)
    rows = []
    for record in manifest.records:
        row = {
            "sample_id": record.sample_id,
            "plate": record.plate,
            "well": record.well,
            "site": record.site,
            "condition": record.condition.value,
            "treatment": record.treatment or "",
            "concentration": "" if record.concentration is None else repr(record.concentration),
            "split": record.split.value if record.split else "",
        }
        for i, image_path in enumerate(record.image_paths, start=1):
            try:
                rel = Path(image_path).resolve().relative_to(path.parent.resolve())
                row[f"channel_{i}"] = rel.as_posix()
            except ValueError:
                row[f"channel_{i}"] = Path(image_path).as_posix()
        rows.append(row)
    columns = REQUIRED_COLUMNS + [f"channel_{i}" for i in range(1, manifest.channel_count + 1)]
    return save_table(path, pd.DataFrame(rows, columns=columns))


def _allocate(total: int, weights: np.ndarray) -> List[int]:
    """最大余数法把 total 按权重分配"""
    raw = weights * total
    counts = np.floor(raw).astype(int)
    remainder = total - counts.sum()
    order = sorted(range(len(weights)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts.tolist()


def split_dataset(manifest: Manifest, seed: int, fractions: Sequence[float] = (0.6, 0.2, 0.2)) -> Manifest:
    """
    划分 Train / Validation / UntreatedTest / TreatedTest

    未给药样本按类别分层、按种子打乱；两类取相同数量（多数类多出的样本被剔除，见 excluded_records），
    给药样本全部进入 TreatedTest。结果只取决于 (manifest, seed)。
    """
    weights = np.asarray(fractions, dtype=float)
    if weights.shape != (3,) or np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError(f"划分比例必须是3个非负权重: {fractions}")
    weights = weights / weights.sum()

    treated = [r.model_copy(update={"split": Split.TREATED_TEST}) for r in manifest.records if r.is_treated]
    untreated = sorted((r for r in manifest.records if not r.is_treated), key=lambda r: r.sample_id)

    by_class: Dict[int, List[SampleRecord]] = {POSITIVE: [], NEGATIVE: []}
    for record in untreated:
        label = manifest.label_of(record)
        if label is None:
            logger.info(f"样本 {record.sample_id} 无二分类标签（{record.condition.value}），不参与划分")
            continue
        by_class[label].append(record)

    per_class = min(len(by_class[POSITIVE]), len(by_class[NEGATIVE]))
    counts = _allocate(per_class, weights)
    for split, weight, count in zip(UNTREATED_SPLITS, weights, counts):
        if weight > 0 and count == 0:
            raise InsufficientSamplesError(
                f"{split.value} 无法分配样本: 每类可用 {per_class} 条 "
                f"(阳性 {len(by_class[POSITIVE])}, 阴性 {len(by_class[NEGATIVE])})"
            )

    rng = np.random.default_rng(seed)
    assigned: List[SampleRecord] = []
    for label in (NEGATIVE, POSITIVE):
        pool = by_class[label]
        order = rng.permutation(len(pool))
        cursor = 0
        for split, count in zip(UNTREATED_SPLITS, counts):
            for idx in order[cursor:cursor + count]:
                assigned.append(pool[idx].model_copy(update={"split": split}))
            cursor += count
        for idx in order[cursor:]:
            logger.info(f"样本 {pool[idx].sample_id} 为多数类剩余样本，类别平衡时剔除")

    records = sorted(assigned, key=lambda r: r.sample_id) + sorted(treated, key=lambda r: r.sample_id)
    logger.info(
        "数据集划分完成: "
        + ", ".join(f"{s.value}={sum(1 for r in records if r.split == s)}" for s in Split)
    )
    return manifest.with_records(records)


def excluded_records(manifest: Manifest, splits: Manifest, no_nuclei: Sequence[str] = ()) -> pd.DataFrame:
    """
    列出未进入任何划分的样本及原因

    Args:
        manifest: 划分前的完整清单
        splits: split_dataset 的输出
        no_nuclei: 因未检测到细胞而预先剔除的样本

    Returns:
        sample_id,condition,reason 表格；reason 取 no_nuclei / unlabeled / class_balance
    """
    assigned = {r.sample_id for r in splits.records}
    empty = set(no_nuclei)
    rows = []
    for record in sorted(manifest.records, key=lambda r: r.sample_id):
        if record.sample_id in assigned:
            continue
        if record.sample_id in empty:
            reason = EXCLUDED_NO_NUCLEI
        elif manifest.label_of(record) is None:
            reason = EXCLUDED_UNLABELED
        else:
            reason = EXCLUDED_CLASS_BALANCE
        rows.append({"sample_id": record.sample_id, "condition": record.condition.value, "reason": reason})
    return pd.DataFrame(rows, columns=EXCLUDED_COLUMNS)
