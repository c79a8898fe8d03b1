"""
图像预处理器
负责多视野拼接、通道归一化以及均匀重叠网格切块。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, model_validator

from shared.utilities.errors import (
    ChannelMismatchError,
    DimensionMismatchError,
    EmptyInputError,
    GridMismatchError,
)

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class MultiChannelImage:
    """多通道图像 [C,H,W]"""
    pixels: np.ndarray
    channel_names: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[1] == 0 or pixels.shape[2] == 0:
            raise DimensionMismatchError(f"图像必须为 [C,H,W] 且尺寸为正: {pixels.shape}")
        if not np.all(np.isfinite(pixels)):
            raise ValueError("图像包含非有限值")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)
        if not self.channel_names:
            object.__setattr__(self, "channel_names", tuple(f"channel_{i + 1}" for i in range(pixels.shape[0])))

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


class GridConfig(BaseModel):
    """均匀重叠切块网格"""
    model_config = ConfigDict(frozen=True)

    patch_size: int = Field(256, gt=0, description="切块边长（像素）")
    stride: int = Field(128, gt=0, description="步长（像素）")
    expected_patches: Optional[int] = Field(None, gt=0, description="每幅图像期望的切块数N")

    @model_validator(mode="after")
    def _check_stride(self) -> "GridConfig":
        if self.stride > self.patch_size:
            raise ValueError("步长不能大于切块边长")
        return self

    @classmethod
    def whole_image(cls, size: int) -> "GridConfig":
        """整图基线：单个整图切块"""
        return cls(patch_size=size, stride=size, expected_patches=1)

    def axis_count(self, dim: int) -> int:
        if dim < self.patch_size or (dim - self.patch_size) % self.stride != 0:
            raise GridMismatchError(
                f"尺寸 {dim} 无法被网格整除覆盖 (patch={self.patch_size}, stride={self.stride})"
            )
        return (dim - self.patch_size) // self.stride + 1

    def grid_shape(self, height: int, width: int) -> Tuple[int, int]:
        """返回 (行数, 列数)，不匹配时抛出 GridMismatchError"""
        shape = (self.axis_count(height), self.axis_count(width))
        if self.expected_patches is not None and shape[0] * shape[1] != self.expected_patches:
            raise GridMismatchError(f"切块数 {shape[0] * shape[1]} 与期望 {self.expected_patches} 不符")
        return shape

    def image_shape(self, grid_shape: Tuple[int, int]) -> Tuple[int, int]:
        rows, cols = grid_shape
        return (rows - 1) * self.stride + self.patch_size, (cols - 1) * self.stride + self.patch_size

    def origin(self, index: int, grid_shape: Tuple[int, int]) -> Tuple[int, int]:
        """切块序号 j = row*cols + col 对应的像素原点"""
        rows, cols = grid_shape
        row, col = divmod(index, cols)
        return row * self.stride, col * self.stride


class ChannelStats(BaseModel):
    """逐通道均值与标准差（仅由训练集计算）"""
    model_config = ConfigDict(frozen=True)

    mean: Tuple[float, ...] = Field(..., min_length=1)
    std: Tuple[float, ...] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _check(self) -> "ChannelStats":
        if len(self.mean) != len(self.std):
            raise ValueError("均值与标准差通道数不一致")
        if any(s < STD_FLOOR for s in self.std):
            raise ValueError(f"标准差不能小于 {STD_FLOOR}")
        return self

    @property
    def channels(self) -> int:
        return len(self.mean)


def stitch_sites(site_images: Sequence[MultiChannelImage]) -> MultiChannelImage:
    """
    按 2x2 布局拼接4个相邻视野（1,2 / 3,4）

    Returns:
        行列尺寸均为输入2倍的图像
    """
    if len(site_images) != 4:
        raise DimensionMismatchError(f"需要4个视野，实际 {len(site_images)} 个")
    first = site_images[0].pixels.shape
    for image in site_images[1:]:
        if image.pixels.shape != first:
            raise DimensionMismatchError(f"视野尺寸不一致: {first} vs {image.pixels.shape}")
    top = np.concatenate([site_images[0].pixels, site_images[1].pixels], axis=2)
    bottom = np.concatenate([site_images[2].pixels, site_images[3].pixels], axis=2)
    return MultiChannelImage(np.concatenate([top, bottom], axis=1), site_images[0].channel_names)


def compute_channel_stats(train_samples: Iterable[MultiChannelImage]) -> ChannelStats:
    """
    在所有训练图像的全部像素上计算逐通道均值/标准差（总体标准差，带下限）

    逐图像取均值与方差，再按像素数合并。
    """
    counts: List[int] = []
    means: List[np.ndarray] = []
    variances: List[np.ndarray] = []
    for image in train_samples:
        pixels = image.pixels
        flat = pixels.reshape(pixels.shape[0], -1)
        if means and flat.shape[0] != means[0].shape[0]:
            raise ChannelMismatchError(f"训练图像通道数不一致: {flat.shape[0]} vs {means[0].shape[0]}")
        if flat.shape[1] == 0:
            continue
        counts.append(flat.shape[1])
        means.append(flat.mean(axis=1))
        variances.append(flat.var(axis=1))
    if not counts:
        raise EmptyInputError("计算通道统计需要至少一幅训练图像")
    weights = np.asarray(counts, dtype=np.float64)[:, None] / sum(counts)
    means_arr, vars_arr = np.stack(means), np.stack(variances)
    mean = (weights * means_arr).sum(axis=0)
    var = (weights * (vars_arr + np.square(means_arr - mean))).sum(axis=0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return ChannelStats(mean=tuple(float(v) for v in mean), std=tuple(float(v) for v in std))


def normalize(image: MultiChannelImage, stats: ChannelStats) -> MultiChannelImage:
    """逐通道 (x - mean) / std"""
    if image.channels != stats.channels:
        raise ChannelMismatchError(f"通道数不一致: 图像 {image.channels}, 统计 {stats.channels}")
    mean = np.asarray(stats.mean)[:, None, None]
    std = np.asarray(stats.std)[:, None, None]
    return MultiChannelImage((image.pixels - mean) / std, image.channel_names)


def denormalize(image: MultiChannelImage, stats: ChannelStats) -> MultiChannelImage:
    """normalize 的逆变换"""
    if image.channels != stats.channels:
        raise ChannelMismatchError(f"通道数不一致: 图像 {image.channels}, 统计 {stats.channels}")
    mean = np.asarray(stats.mean)[:, None, None]
    std = np.asarray(stats.std)[:, None, None]
    return MultiChannelImage(image.pixels * std + mean, image.channel_names)


def center_crop(image: MultiChannelImage, grid: GridConfig) -> MultiChannelImage:
    """裁剪到网格可整除覆盖的最大中心区域（用于其他来源的数据）"""

    def _fit(dim: int) -> int:
        if dim < grid.patch_size:
            raise GridMismatchError(f"尺寸 {dim} 小于切块边长 {grid.patch_size}")
        return grid.patch_size + ((dim - grid.patch_size) // grid.stride) * grid.stride

    h, w = _fit(image.height), _fit(image.width)
    top, left = (image.height - h) // 2, (image.width - w) // 2
    return MultiChannelImage(image.pixels[:, top:top + h, left:left + w], image.channel_names)


def patch_array(pixels: np.ndarray, grid: GridConfig) -> np.ndarray:
    """
    以视图方式切块，返回 [N,C,P,P]，按行优先排序

    Args:
        pixels: [C,H,W] 数组
    """
    rows, cols = grid.grid_shape(pixels.shape[1], pixels.shape[2])
    windows = sliding_window_view(pixels, (grid.patch_size, grid.patch_size), axis=(1, 2))
    windows = windows[:, ::grid.stride, ::grid.stride]
    # [C,rows,cols,P,P] -> [rows*cols,C,P,P]
    return windows.transpose(1, 2, 0, 3, 4).reshape(rows * cols, pixels.shape[0], grid.patch_size, grid.patch_size)


def extract_patches(image: MultiChannelImage, grid: GridConfig) -> List[Tuple[int, np.ndarray, Tuple[int, int]]]:
    """返回 (切块序号, 切块张量, 像素原点) 列表，行优先"""
    shape = grid.grid_shape(image.height, image.width)
    patches = patch_array(image.pixels, grid)
    return [(j, patches[j], grid.origin(j, shape)) for j in range(patches.shape[0])]
