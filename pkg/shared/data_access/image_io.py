"""
图像读写

单通道灰度PNG/TIFF，8位或16位；读取后强度缩放到[0,1]。
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import tifffile
from skimage import io as skio

from shared.utilities.errors import ScreenIOError
from shared.utilities.file_utils import ensure_directory

logger = logging.getLogger(__name__)

TIFF_SUFFIXES = {".tif", ".tiff"}


def to_unit_range(array: np.ndarray) -> np.ndarray:
    """按位深把整数图像缩放到[0,1]"""
    if array.dtype == np.uint8:
        return array.astype(np.float64) / 255.0
    if array.dtype == np.uint16:
        return array.astype(np.float64) / 65535.0
    if np.issubdtype(array.dtype, np.integer):
        raise ScreenIOError(f"不支持的位深: {array.dtype}")
    return np.clip(array.astype(np.float64), 0.0, 1.0)


def read_channel(path: Path) -> np.ndarray:
    """读取单通道图像，返回[0,1]浮点二维数组"""
    path = Path(path)
    if not path.exists():
        raise ScreenIOError(f"图像文件不存在: {path}")
    try:
        if path.suffix.lower() in TIFF_SUFFIXES:
            array = tifffile.imread(str(path))
        else:
            array = skio.imread(str(path))
    except Exception as e:
        raise ScreenIOError(f"读取图像失败 {path}: {e}")
    if array.ndim != 2:
        raise ScreenIOError(f"图像必须为单通道灰度: {path} shape={array.shape}")
    return to_unit_range(array)


def read_channels(paths: Sequence[str]) -> np.ndarray:
    """读取一组通道文件，返回 [C,H,W]"""
    return np.stack([read_channel(Path(p)) for p in paths], axis=0)


def write_channel(path: Path, values: np.ndarray, bit_depth: int = 8) -> Path:
    """把[0,1]浮点图像量化写出"""
    path = Path(path)
    ensure_directory(path.parent)
    scale, dtype = (255.0, np.uint8) if bit_depth == 8 else (65535.0, np.uint16)
    quantized = np.round(np.clip(values, 0.0, 1.0) * scale).astype(dtype)
    try:
        if path.suffix.lower() in TIFF_SUFFIXES:
            tifffile.imwrite(str(path), quantized)
        else:
            skio.imsave(str(path), quantized, check_contrast=False)
    except Exception as e:
        raise ScreenIOError(f"写出图像失败 {path}: {e}")
    return path


def write_rgb(path: Path, rgb: np.ndarray) -> Path:
    """写出[H,W,3]的[0,1]彩色图像"""
    path = Path(path)
    ensure_directory(path.parent)
    quantized = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    try:
        skio.imsave(str(path), quantized, check_contrast=False)
    except Exception as e:
        raise ScreenIOError(f"写出图像失败 {path}: {e}")
    return path
