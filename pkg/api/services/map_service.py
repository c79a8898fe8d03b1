"""
感染图服务 - 由检查点生成感染图、叠加图与感染像素比例
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from shared.analysis_tools.infection_map import (
    build_infection_map,
    infected_fraction,
    save_map_csv,
    save_map_png,
    save_overlay_png,
)
from shared.data_access.checkpoint_store import Checkpoint
from shared.data_access.image_io import read_channel
from shared.data_access.manifest_loader import Manifest, SampleRecord, Split
from shared.mil.bag_inference import PatchScoreSet, bag_score, sample_infection_probability
from shared.utilities.file_utils import ensure_directory, save_table

from ..models import MapSampleScope, RunConfig, StageName, StageResult
from .base_service import BaseService, score_records

logger = logging.getLogger(__name__)

FRACTION_COLUMNS = ["sample_id", "split", "bag_score", "z", "infected_fraction"]

SCOPE_SPLITS = {
    MapSampleScope.TEST: (Split.UNTREATED_TEST, Split.TREATED_TEST),
    MapSampleScope.UNTREATED_TEST: (Split.UNTREATED_TEST,),
    MapSampleScope.TREATED_TEST: (Split.TREATED_TEST,),
    MapSampleScope.ALL: tuple(Split),
}


def select_map_samples(manifest: Manifest, scope: MapSampleScope, max_samples: Optional[int] = None) -> List[SampleRecord]:
    """按范围选样本，按 sample_id 排序后截断"""
    splits = set(SCOPE_SPLITS[scope])
    records = sorted((r for r in manifest.records if r.split in splits), key=lambda r: r.sample_id)
    return records[:max_samples] if max_samples else records


def emit_map_overlays(
    checkpoint: Checkpoint,
    samples: Sequence[SampleRecord],
    config: RunConfig,
    out_dir: Path,
    score_sets: Optional[Sequence[PatchScoreSet]] = None,
) -> pd.DataFrame:
    """
    逐样本生成感染图；开启叠加时每个（样本, 通道）输出一张反相灰度 + 红色叠加图

    Returns:
        每个样本的包分数、z 与感染像素比例
    """
    if score_sets is None:
        score_sets = score_records(checkpoint, samples, config.train.chunk_size, config.jobs)
    settings = config.maps
    map_dir, overlay_dir = out_dir / "maps", out_dir / "overlays"
    ensure_directory(map_dir)
    rows = []
    for record, scores in zip(samples, score_sets):
        infection_map = build_infection_map(scores, checkpoint.grid, settings.alpha, settings.sigma)
        save_map_png(map_dir / f"{record.sample_id}.png", infection_map)
        if settings.export_csv:
            save_map_csv(map_dir / f"{record.sample_id}.csv", infection_map)
        if settings.overlays:
            for c, path in enumerate(record.image_paths):
                save_overlay_png(overlay_dir / f"{record.sample_id}_c{c}.png", read_channel(Path(path)), infection_map)
        rows.append({
            "sample_id": record.sample_id,
            "split": record.split.value if record.split else "",
            "bag_score": bag_score(scores),
            "z": sample_infection_probability(scores),
            "infected_fraction": infected_fraction(infection_map, config.train.eta),
        })
    logger.info(f"已生成 {len(rows)} 张感染图: {map_dir}")
    return pd.DataFrame(rows, columns=FRACTION_COLUMNS)


class MapService(BaseService):
    """感染图阶段"""

    stage = StageName.MAP

    def config_subset(self) -> Dict[str, Any]:
        return {"eta": self.config.train.eta, "maps": self.config.maps.model_dump(mode="json")}

    def input_files(self) -> List[Path]:
        return list(self.preprocessed_paths().values()) + [self.checkpoint_path()]

    def run_stage(self) -> Dict[str, Path]:
        out_dir = self.stage_dir()
        manifest, _ = self.load_preprocessed()
        checkpoint = self.load_trained(manifest)
        samples = select_map_samples(manifest, self.config.maps.samples, self.config.maps.max_samples)
        fractions = emit_map_overlays(checkpoint, samples, self.config, out_dir)
        return {
            "fractions": save_table(out_dir / "fractions.csv", fractions),
            "maps": out_dir / "maps",
        }


def map_service(config: RunConfig, use_cache: bool = True) -> StageResult:
    return MapService(config).execute(use_cache=use_cache)
