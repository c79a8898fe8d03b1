"""
DEEMD 测试配置文件
"""
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pytest

# 添加项目根目录到Python路径
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from api.models.requests.run_config import (  # noqa: E402
    KSelectionSettings,
    MapSettings,
    PreprocessSettings,
    RunConfig,
)
from shared.data_access.image_io import write_channel  # noqa: E402
from shared.data_access.manifest_loader import REQUIRED_COLUMNS  # noqa: E402
from shared.data_processors.image_processor import GridConfig  # noqa: E402
from shared.data_processors.synth_screen import SynthConfig, SynthTreatment  # noqa: E402
from shared.mil.trainer import TrainConfig  # noqa: E402


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch):
    """屏蔽本机 DEEMD_* 环境变量"""
    for name in ("DEEMD_CACHE_DIR", "DEEMD_JOBS", "DEEMD_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def tiny_synth_config() -> SynthConfig:
    """64x64、双通道、9个切块的小型合成筛选"""
    return SynthConfig(
        image_size=64,
        channels=2,
        cells_min=6,
        cells_max=8,
        n_mock=6,
        n_uv=6,
        n_infected=12,
        treatments=[
            SynthTreatment(name="hit", doses=(1.0, 10.0), effectiveness=(0.95, 1.0)),
            SynthTreatment(name="inert", doses=(1.0, 10.0), effectiveness=(0.0, 0.0)),
        ],
        replicates=3,
        patch_size=32,
        stride=16,
        plate="TST",
        seed=3,
    )


@pytest.fixture
def tiny_run_config(tmp_path, tiny_synth_config) -> RunConfig:
    """使用小型合成筛选、两轮训练的运行配置"""
    return RunConfig(
        run_dir=tmp_path / "run",
        seed=3,
        grid=GridConfig(patch_size=32, stride=16, expected_patches=9),
        preprocess=PreprocessSettings(stitch_sites=False),
        train=TrainConfig(k=2, epochs=2, batch_size=16, learning_rate=3e-3, patience=5,
                          conv_channels=(4, 8), chunk_size=64),
        maps=MapSettings(sigma=4.0, max_samples=3),
        select_k=KSelectionSettings(candidates=(1, 2)),
        synth=tiny_synth_config,
    )


@pytest.fixture
def write_manifest(tmp_path):
    """
    写出清单与随机图像的工厂函数

    rows 中每项为 REQUIRED_COLUMNS 的子集，缺省字段取默认值；
    images=False 时只写清单不写图像。
    """

    def _write(
        rows: Sequence[Dict[str, object]],
        channels: int = 1,
        size: int = 32,
        images: bool = True,
        name: str = "manifest.csv",
        seed: int = 0,
    ) -> Path:
        rng = np.random.default_rng(seed)
        directory = tmp_path / "screen"
        directory.mkdir(parents=True, exist_ok=True)
        lines: List[str] = [",".join(REQUIRED_COLUMNS + [f"channel_{c}" for c in range(1, channels + 1)])]
        for i, row in enumerate(rows):
            sample_id = str(row.get("sample_id", f"S{i:03d}"))
            values = {
                "sample_id": sample_id,
                "plate": "P1",
                "well": f"A{i + 1:02d}",
                "site": "1",
                "condition": "Infected",
                "treatment": "",
                "concentration": "",
                "split": "",
            }
            values.update({key: str(value) for key, value in row.items()})
            paths = []
            for c in range(1, channels + 1):
                rel = f"images/{sample_id}_ch{c}.png"
                if images:
                    write_channel(directory / rel, rng.random((size, size)))
                paths.append(rel)
            lines.append(",".join([values[col] for col in REQUIRED_COLUMNS] + paths))
        path = directory / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return _write


def disc_image(size: int, centers: Sequence[Sequence[float]], radius: float = 5.0,
               intensity: float = 0.9, background: float = 0.05, noise: Optional[float] = None,
               seed: int = 0) -> np.ndarray:
    """暗背景上的亮圆盘"""
    rows, cols = np.mgrid[0:size, 0:size]
    image = np.full((size, size), background)
    for row, col in centers:
        image[(rows - row) ** 2 + (cols - col) ** 2 <= radius ** 2] = intensity
    if noise:
        image = image + np.random.default_rng(seed).normal(scale=noise, size=image.shape)
    return np.clip(image, 0.0, 1.0)
