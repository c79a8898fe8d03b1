"""
预处理服务 - 细胞核计数、空样本剔除、数据集划分与通道统计
"""

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

from shared.data_access.image_io import read_channel, read_channels
from shared.data_access.manifest_loader import (
    Manifest,
    SampleRecord,
    Split,
    excluded_records,
    load_manifest,
    save_manifest,
    split_dataset,
)
from shared.data_processors.image_processor import MultiChannelImage, compute_channel_stats, stitch_sites
from shared.data_processors.nuclei_processor import (
    NucleusCountResult,
    count_nuclei,
    counts_table,
    filter_empty_samples,
    summarize_counts,
)
from shared.utilities.errors import ChannelMismatchError
from shared.utilities.file_utils import file_sha256, save_metadata, save_table

from ..models import RunConfig, StageName, StageResult
from .base_service import BaseService

logger = logging.getLogger(__name__)

SITE_LAYOUT = (1, 2, 3, 4)


class PreprocessService(BaseService):
    """预处理阶段"""

    stage = StageName.PREPROCESS

    def source_manifest(self) -> Path:
        if self.config.manifest is not None:
            return Path(self.config.manifest)
        return self.run_dir / StageName.SYNTH.directory / "manifest.csv"

    def config_subset(self) -> Dict[str, Any]:
        return {
            "seed": self.config.seed,
            "split": self.config.split.model_dump(mode="json"),
            "preprocess": self.config.preprocess.model_dump(mode="json"),
        }

    def input_files(self) -> List[Path]:
        source = self.source_manifest()
        manifest = load_manifest(source, merge_controls=self.config.split.merge_controls)
        return [source] + [Path(p) for r in manifest.records for p in r.image_paths]

    # ------------------------------------------------------------------
    def _count_groups(self, manifest: Manifest) -> List[Tuple[SampleRecord, ...]]:
        """按孔位分组；含1-4号视野的孔位拼接后统一计数"""
        if not self.config.preprocess.stitch_sites:
            return [(r,) for r in manifest.records]
        wells: Dict[Tuple[str, str], List[SampleRecord]] = defaultdict(list)
        for record in manifest.records:
            wells[(record.plate, record.well)].append(record)
        groups: List[Tuple[SampleRecord, ...]] = []
        for record in manifest.records:
            sites = sorted(wells[(record.plate, record.well)], key=lambda r: r.site)
            if record.well and tuple(r.site for r in sites) == SITE_LAYOUT:
                if record is sites[0]:
                    groups.append(tuple(sites))
            else:
                groups.append((record,))
        return groups

    def _count_group(self, group: Sequence[SampleRecord]) -> NucleusCountResult:
        settings = self.config.preprocess
        channel = settings.dna_channel
        if len(group) == 4:
            sites = [MultiChannelImage(read_channel(Path(r.image_paths[channel]))[None]) for r in group]
            dna = stitch_sites(sites).pixels[0]
        else:
            dna = read_channel(Path(group[0].image_paths[channel]))
        return count_nuclei(dna, min_area=settings.min_area, seed_radius=settings.seed_radius)

    def count_all(self, manifest: Manifest) -> Dict[str, NucleusCountResult]:
        if self.config.preprocess.dna_channel >= manifest.channel_count:
            raise ChannelMismatchError(
                f"DNA通道序号 {self.config.preprocess.dna_channel} 超出通道数 {manifest.channel_count}"
            )
        groups = self._count_groups(manifest)
        if self.config.jobs > 1:
            with ThreadPoolExecutor(max_workers=self.config.jobs) as pool:
                results = list(pool.map(self._count_group, groups))
        else:
            results = [self._count_group(g) for g in groups]
        counts: Dict[str, NucleusCountResult] = {}
        for group, result in zip(groups, results):
            for record in group:
                counts[record.sample_id] = result
        return counts

    def run_stage(self) -> Dict[str, Path]:
        out_dir = self.stage_dir()
        manifest = load_manifest(self.source_manifest(), merge_controls=self.config.split.merge_controls)
        counts = self.count_all(manifest)
        save_table(out_dir / "nuclei_counts.csv", counts_table(counts))
        save_metadata(out_dir / "nuclei_summary.json", summarize_counts(manifest, counts))

        exclude_empty = self.config.preprocess.exclude_empty
        kept = filter_empty_samples(manifest, counts) if exclude_empty else manifest
        splits = split_dataset(kept, self.config.seed, self.config.split.fractions)
        no_nuclei = [sid for sid, result in counts.items() if result.count == 0] if exclude_empty else []
        excluded = excluded_records(manifest, splits, no_nuclei)
        if len(excluded):
            reasons = excluded["reason"].value_counts().sort_index()
            logger.info(f"未参与划分的样本 {len(excluded)} 条: {reasons.to_dict()}")

        train_records = splits.by_split(Split.TRAIN)
        stats = compute_channel_stats(MultiChannelImage(read_channels(r.image_paths)) for r in train_records)
        logger.info(f"通道统计（训练集 {len(train_records)} 个样本）: mean={stats.mean}, std={stats.std}")

        image_hashes = {r.sample_id: [file_sha256(Path(p)) for p in r.image_paths] for r in splits.records}
        outputs = {
            "manifest": save_manifest(splits, out_dir / "manifest.csv"),
            "excluded": save_table(out_dir / "excluded.csv", excluded),
            "nuclei_counts": out_dir / "nuclei_counts.csv",
            "nuclei_summary": out_dir / "nuclei_summary.json",
            "channel_stats": out_dir / "channel_stats.json",
            "image_hashes": out_dir / "image_hashes.json",
        }
        save_metadata(outputs["channel_stats"], stats.model_dump(mode="json"))
        save_metadata(outputs["image_hashes"], image_hashes)
        return outputs


def preprocess_service(config: RunConfig, use_cache: bool = True) -> StageResult:
    return PreprocessService(config).execute(use_cache=use_cache)
