"""
合成数据服务 - 生成合成筛选（图像、清单、真值）
"""

import logging
from pathlib import Path
from typing import Any, Dict, List

from shared.data_processors.synth_screen import generate_screen
from shared.utilities.errors import ConfigError

from ..models import RunConfig, StageName, StageResult
from .base_service import BaseService

logger = logging.getLogger(__name__)


class SynthService(BaseService):
    """合成数据阶段"""

    stage = StageName.SYNTH

    def config_subset(self) -> Dict[str, Any]:
        if self.config.synth is None:
            raise ConfigError("配置中没有 synth 部分")
        return self.config.synth.model_dump(mode="json")

    def input_files(self) -> List[Path]:
        return []

    def run_stage(self) -> Dict[str, Path]:
        out_dir = self.stage_dir()
        screen = generate_screen(self.config.synth, out_dir, jobs=self.config.jobs)
        logger.info(f"合成筛选已生成: {len(screen.manifest)} 个样本, 预设有效药物 {sorted(screen.ground_truth.planted_effective)}")
        return {
            "manifest": screen.manifest_path,
            "ground_truth": out_dir / "ground_truth.csv",
            "planted": out_dir / "planted.csv",
            "samples": out_dir / "samples.csv",
        }


def synth_service(config: RunConfig, use_cache: bool = True) -> StageResult:
    return SynthService(config).execute(use_cache=use_cache)
