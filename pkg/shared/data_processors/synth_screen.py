"""
合成筛选数据生成器

生成带实例级真值的多通道合成孔图像：
- 通道1为高斯轮廓的细胞核，其余通道为相关的胞质纹理；
- 感染细胞在非细胞核通道上叠加明亮的圆形团块（CPE）和碎裂斑点；
- 每个细胞的感染概率服从泊松模型 1 - e^(-moi)，给药样本按有效性 q 缩放为 (1-q)(1-e^(-moi))；
- 每个细胞的感染硬币在不同有效性之间共享，有效性越高感染细胞越少。

样本 i 的随机流为 default_rng([seed, i])。
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator
from scipy.ndimage import gaussian_filter
from skimage.draw import disk

from shared.data_access.image_io import write_channel
from shared.data_access.manifest_loader import Condition, Manifest, SampleRecord, Split, save_manifest
from shared.data_processors.image_processor import GridConfig
from shared.utilities.errors import NegativeMoiError, ScreenIOError
from shared.utilities.file_utils import ensure_directory, save_table

logger = logging.getLogger(__name__)

PLANTED_EFFECTIVE_LEVEL = 0.9


def poisson_infection_probability(moi: float) -> float:
    """细胞被感染的概率 1 - P[X=0] = 1 - e^(-moi)"""
    if moi < 0:
        raise NegativeMoiError(f"MOI 不能为负: {moi}")
    return float(-math.expm1(-moi))


class SynthTreatment(BaseModel):
    """合成药物：各剂量下的有效性"""
    name: str = Field(..., min_length=1, description="药物名称")
    doses: Tuple[float, ...] = Field(..., min_length=1, description="浓度（µM）")
    effectiveness: Tuple[float, ...] = Field(..., min_length=1, description="各剂量有效性 q")

    @model_validator(mode="after")
    def _check(self) -> "SynthTreatment":
        if len(self.doses) != len(self.effectiveness):
            raise ValueError(f"{self.name}: 剂量与有效性数量不一致")
        if any(d <= 0 for d in self.doses):
            raise ValueError(f"{self.name}: 浓度必须为正")
        if any(not 0 <= q <= 1 for q in self.effectiveness):
            raise ValueError(f"{self.name}: 有效性必须位于 [0,1]")
        return self

    @property
    def top_dose_effectiveness(self) -> float:
        return self.effectiveness[int(np.argmax(self.doses))]


class SynthConfig(BaseModel):
    """合成筛选配置"""
    image_size: int = Field(128, gt=0, description="图像边长（像素）")
    channels: int = Field(3, ge=1, description="通道数")
    moi: float = Field(0.4, ge=0, description="感染复数")
    cells_min: int = Field(30, ge=1, description="每幅图像最少细胞数")
    cells_max: int = Field(45, ge=1, description="每幅图像最多细胞数")
    min_separation: float = Field(12.0, ge=0, description="细胞中心最小间距")
    nucleus_radius: float = Field(4.0, gt=0, description="细胞核半径")
    nucleus_intensity: float = Field(0.8, gt=0, le=1, description="细胞核亮度")
    cell_radius: float = Field(8.0, gt=0, description="胞质半径")
    cytoplasm_intensity: float = Field(0.12, ge=0, le=1, description="胞质亮度")
    cpe_radius: float = Field(6.0, gt=0, description="CPE 团块半径")
    cpe_intensity: float = Field(0.9, gt=0, le=1, description="CPE 团块亮度")
    speckle_intensity: float = Field(0.3, ge=0, le=1, description="碎裂斑点亮度")
    cell_loss: float = Field(0.5, ge=0, le=1, description="感染细胞脱落（细胞核消失）的概率")
    background: float = Field(0.03, ge=0, le=1, description="背景亮度")
    noise_std: float = Field(0.02, ge=0, description="高斯噪声标准差")
    n_mock: int = Field(100, ge=0, description="Mock 对照样本数")
    n_uv: int = Field(100, ge=0, description="UV 灭活对照样本数")
    n_infected: int = Field(200, ge=0, description="未给药感染样本数")
    treatments: List[SynthTreatment] = Field(default_factory=list, description="给药设计")
    replicates: int = Field(6, ge=1, description="每个剂量的重复孔数")
    patch_size: int = Field(32, gt=0, description="真值切块边长")
    stride: int = Field(16, gt=0, description="真值切块步长")
    plate: str = Field("SYN1", description="板号")
    seed: int = Field(0, description="随机种子")

    @model_validator(mode="after")
    def _check(self) -> "SynthConfig":
        if self.cells_max < self.cells_min:
            raise ValueError("cells_max 不能小于 cells_min")
        self.grid.grid_shape(self.image_size, self.image_size)
        return self

    @property
    def grid(self) -> GridConfig:
        return GridConfig(patch_size=self.patch_size, stride=self.stride)


@dataclass(frozen=True)
class SampleDesign:
    """单个合成样本的设计"""
    index: int
    sample_id: str
    well: str
    condition: Condition
    treatment: Optional[str] = None
    concentration: Optional[float] = None
    effectiveness: float = 0.0


@dataclass(frozen=True)
class CellLayout:
    """单个样本的细胞位置与状态"""
    centers: np.ndarray
    infected: np.ndarray
    lost: np.ndarray
    jitter: np.ndarray

    @property
    def n_cells(self) -> int:
        return int(self.centers.shape[0])


@dataclass
class SynthGroundTruth:
    """合成数据真值"""
    bag_labels: Dict[str, int] = field(default_factory=dict)
    instance_labels: Dict[str, np.ndarray] = field(default_factory=dict)
    infected_fraction: Dict[str, float] = field(default_factory=dict)
    planted_effective: Set[str] = field(default_factory=set)


@dataclass
class SynthScreen:
    manifest: Manifest
    ground_truth: SynthGroundTruth
    manifest_path: Path
    output_dir: Path


def design_samples(cfg: SynthConfig) -> List[SampleDesign]:
    """按固定顺序排列样本：Mock、UV、感染，随后为给药样本"""
    designs: List[SampleDesign] = []

    def _add(condition: Condition, **kwargs) -> None:
        index = len(designs)
        well = f"W{index + 1:04d}"
        designs.append(SampleDesign(index=index, sample_id=f"{cfg.plate}_{well}_s1", well=well, condition=condition, **kwargs))

    for _ in range(cfg.n_mock):
        _add(Condition.MOCK)
    for _ in range(cfg.n_uv):
        _add(Condition.UV_INACTIVATED)
    for _ in range(cfg.n_infected):
        _add(Condition.INFECTED)
    for treatment in cfg.treatments:
        for dose, q in zip(treatment.doses, treatment.effectiveness):
            for _ in range(cfg.replicates):
                _add(Condition.INFECTED, treatment=treatment.name, concentration=dose, effectiveness=q)
    return designs


def _place_cells(cfg: SynthConfig, rng: np.random.Generator, n_cells: int) -> np.ndarray:
    margin = cfg.nucleus_radius
    high = cfg.image_size - margin
    centers: List[Tuple[float, float]] = []
    for _ in range(n_cells * 200):
        if len(centers) == n_cells:
            break
        candidate = rng.uniform(margin, high, size=2)
        if centers:
            gaps = np.hypot(*(np.asarray(centers) - candidate).T)
            if gaps.min() < cfg.min_separation:
                continue
        centers.append((float(candidate[0]), float(candidate[1])))
    if len(centers) < n_cells:
        logger.debug(f"仅放置了 {len(centers)}/{n_cells} 个细胞")
    return np.asarray(centers, dtype=np.float64).reshape(-1, 2)


def draw_cells(cfg: SynthConfig, rng: np.random.Generator, condition: Condition, effectiveness: float = 0.0) -> CellLayout:
    """
    抽取细胞位置与感染状态

    随机数消耗顺序与条件和有效性无关，保证不同有效性之间共享同一组硬币。
    """
    n_cells = int(rng.integers(cfg.cells_min, cfg.cells_max + 1))
    centers = _place_cells(cfg, rng, n_cells)
    n = centers.shape[0]
    infection_coin = rng.random(n)
    loss_coin = rng.random(n)
    jitter = rng.uniform(0.8, 1.2, size=n)

    p_cell = poisson_infection_probability(cfg.moi) * (1.0 - effectiveness) if condition == Condition.INFECTED else 0.0
    infected = infection_coin < p_cell
    lost = infected & (loss_coin < cfg.cell_loss)
    return CellLayout(centers=centers, infected=infected, lost=lost, jitter=jitter)


def render_cells(cfg: SynthConfig, layout: CellLayout, rng: np.random.Generator) -> np.ndarray:
    """把细胞渲染为 [C,H,W] 的 [0,1] 图像"""
    size = cfg.image_size
    shape = (size, size)
    # 随机场按固定形状抽取
    texture = gaussian_filter(rng.normal(size=shape), 2.0)
    texture /= max(float(texture.std()), 1e-12)
    channel_noise = rng.normal(size=(cfg.channels, size, size))
    speckle_field = rng.random(shape)
    pixel_noise = rng.normal(size=(cfg.channels, size, size))

    nuclei = np.zeros(shape)
    cytoplasm = np.zeros(shape)
    cpe = np.zeros(shape)
    infected_area = np.zeros(shape, dtype=bool)
    for (row, col), infected, lost, jit in zip(layout.centers, layout.infected, layout.lost, layout.jitter):
        if not lost:
            rr, cc = disk((row, col), cfg.nucleus_radius, shape=shape)
            nuclei[rr, cc] = np.maximum(nuclei[rr, cc], cfg.nucleus_intensity * jit)
        rr, cc = disk((row, col), cfg.cell_radius, shape=shape)
        cytoplasm[rr, cc] = np.maximum(cytoplasm[rr, cc], cfg.cytoplasm_intensity * jit)
        if infected:
            infected_area[rr, cc] = True
            rr, cc = disk((row, col), cfg.cpe_radius, shape=shape)
            cpe[rr, cc] = cfg.cpe_intensity
    speckle = np.where(infected_area & (speckle_field > 0.85), cfg.speckle_intensity, 0.0)

    image = np.empty((cfg.channels, size, size))
    image[0] = gaussian_filter(nuclei, 1.0)
    cpe_channels = range(1, cfg.channels) if cfg.channels > 1 else range(0, 1)
    for c in range(1, cfg.channels):
        image[c] = cytoplasm * (1.0 + 0.3 * texture + 0.1 * channel_noise[c])
    for c in cpe_channels:
        image[c] = np.maximum(image[c], cpe) + speckle
    image += cfg.background + cfg.noise_std * pixel_noise
    return np.clip(image, 0.0, 1.0)


def patch_labels(cfg: SynthConfig, layout: CellLayout) -> np.ndarray:
    """切块标签：切块内含任一感染细胞中心即为1"""
    grid = cfg.grid
    grid_shape = grid.grid_shape(cfg.image_size, cfg.image_size)
    labels = np.zeros(grid_shape[0] * grid_shape[1], dtype=int)
    infected_centers = layout.centers[layout.infected]
    for j in range(labels.size):
        top, left = grid.origin(j, grid_shape)
        inside = (
            (infected_centers[:, 0] >= top) & (infected_centers[:, 0] < top + grid.patch_size)
            & (infected_centers[:, 1] >= left) & (infected_centers[:, 1] < left + grid.patch_size)
        )
        labels[j] = int(inside.any())
    return labels


def sample_rng(cfg: SynthConfig, index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, index])


def simulate_sample(cfg: SynthConfig, design: SampleDesign) -> Tuple[CellLayout, np.ndarray]:
    """生成单个样本的细胞布局与图像"""
    rng = sample_rng(cfg, design.index)
    layout = draw_cells(cfg, rng, design.condition, design.effectiveness)
    return layout, render_cells(cfg, layout, rng)


def _write_sample(cfg: SynthConfig, design: SampleDesign, image_dir: Path) -> Tuple[SampleRecord, CellLayout]:
    layout, image = simulate_sample(cfg, design)
    paths = []
    for c in range(cfg.channels):
        path = image_dir / f"{design.sample_id}_ch{c + 1}.png"
        write_channel(path, image[c], bit_depth=8)
        paths.append(str(path))
    record = SampleRecord(
        sample_id=design.sample_id,
        plate=cfg.plate,
        well=design.well,
        site=1,
        condition=design.condition,
        treatment=design.treatment,
        concentration=design.concentration,
        image_paths=tuple(paths),
        split=Split.TREATED_TEST if design.treatment is not None else None,
    )
    return record, layout


def planted_table(cfg: SynthConfig) -> pd.DataFrame:
    rows = []
    for treatment in cfg.treatments:
        effective = treatment.top_dose_effectiveness >= PLANTED_EFFECTIVE_LEVEL
        for dose, q in zip(treatment.doses, treatment.effectiveness):
            rows.append({"treatment": treatment.name, "concentration": dose, "effectiveness": q, "planted_effective": effective})
    return pd.DataFrame(rows, columns=["treatment", "concentration", "effectiveness", "planted_effective"])


def generate_screen(cfg: SynthConfig, output_dir: Path, jobs: int = 1) -> SynthScreen:
    """
    生成合成筛选：图像、清单与真值文件

    输出：manifest.csv、images/*.png、ground_truth.csv、planted.csv、samples.csv
    """
    output_dir = Path(output_dir)
    image_dir = output_dir / "images"
    try:
        ensure_directory(image_dir)
    except OSError as e:
        raise ScreenIOError(f"无法创建输出目录 {image_dir}: {e}")

    designs = design_samples(cfg)
    logger.info(f"生成合成筛选: {len(designs)} 个样本, {cfg.channels} 通道, {cfg.image_size}x{cfg.image_size}")
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda d: _write_sample(cfg, d, image_dir), designs))
    else:
        results = [_write_sample(cfg, d, image_dir) for d in designs]

    truth = SynthGroundTruth()
    gt_rows, sample_rows = [], []
    for design, (record, layout) in zip(designs, results):
        labels = patch_labels(cfg, layout)
        truth.instance_labels[design.sample_id] = labels
        truth.bag_labels[design.sample_id] = int(labels.any())
        fraction = float(layout.infected.mean()) if layout.n_cells else 0.0
        truth.infected_fraction[design.sample_id] = fraction
        gt_rows.extend({"sample_id": design.sample_id, "patch_index": j, "instance_label": int(v)} for j, v in enumerate(labels))
        sample_rows.append({
            "sample_id": design.sample_id,
            "bag_label": truth.bag_labels[design.sample_id],
            "n_cells": layout.n_cells,
            "n_infected": int(layout.infected.sum()),
            "n_nuclei": int((~layout.lost).sum()),
            "infected_fraction": fraction,
        })
    truth.planted_effective = {t.name for t in cfg.treatments if t.top_dose_effectiveness >= PLANTED_EFFECTIVE_LEVEL}

    manifest = Manifest(records=tuple(r for r, _ in results), channel_count=cfg.channels)
    manifest_path = save_manifest(manifest, output_dir / "manifest.csv")
    save_table(output_dir / "ground_truth.csv", pd.DataFrame(gt_rows, columns=["sample_id", "patch_index", "instance_label"]))
    save_table(output_dir / "planted.csv", planted_table(cfg))
    save_table(output_dir / "samples.csv", pd.DataFrame(sample_rows))
    return SynthScreen(manifest=manifest, ground_truth=truth, manifest_path=manifest_path, output_dir=output_dir)


def load_instance_labels(path: Path) -> Dict[str, np.ndarray]:
    """读取 ground_truth.csv -> sample_id: 按切块序号排列的标签"""
    table = pd.read_csv(path, dtype={"sample_id": str})
    labels: Dict[str, np.ndarray] = {}
    for sample_id, frame in table.groupby("sample_id", sort=True):
        labels[str(sample_id)] = frame.sort_values("patch_index")["instance_label"].to_numpy(dtype=int)
    return labels
