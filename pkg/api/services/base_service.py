"""
基础服务类 - 提供所有阶段服务的公共功能（运行目录、阶段缓存、数据集加载）
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from shared.data_access.checkpoint_store import Checkpoint, load_checkpoint
from shared.data_access.image_io import read_channels
from shared.data_access.manifest_loader import Manifest, SampleRecord, load_manifest
from shared.data_processors.image_processor import ChannelStats, GridConfig, MultiChannelImage, normalize, patch_array
from shared.mil.bag_inference import KValue, PatchScoreSet
from shared.mil.trainer import BagDataset
from shared.utilities.config_utils import resolve_cache_dir
from shared.utilities.errors import (
    ChannelMismatchError,
    CheckpointMismatchError,
    EmptyInputError,
    ScreenError,
    StageError,
)
from shared.utilities.file_utils import (
    canonical_hash,
    create_run_structure,
    ensure_directory,
    file_sha256,
    files_digest,
    load_metadata,
    save_metadata,
    update_timestamp,
)

from ..models import CacheRecord, CacheStatus, RunConfig, StageName, StageResult

logger = logging.getLogger(__name__)


class BaseService:
    """阶段服务基类：子类实现 config_subset / input_files / run_stage"""

    stage: StageName = StageName.CONFIG

    def __init__(self, config: RunConfig):
        self.config = config
        self.run_dir = Path(config.run_dir)
        create_run_structure(self.run_dir)
        self.cache_dir = resolve_cache_dir(self.run_dir)
        ensure_directory(self.cache_dir)

    # ------------------------------------------------------------------
    # 目录
    # ------------------------------------------------------------------
    def stage_dir(self, stage: Optional[StageName] = None) -> Path:
        """阶段输出目录"""
        directory = self.run_dir / (stage or self.stage).directory
        ensure_directory(directory)
        return directory

    def to_run_rel(self, path: Path) -> str:
        """转换为相对运行目录的POSIX路径"""
        try:
            return Path(path).resolve().relative_to(self.run_dir.resolve()).as_posix()
        except ValueError:
            return Path(path).as_posix()

    # ------------------------------------------------------------------
    # 子类接口
    # ------------------------------------------------------------------
    def config_subset(self) -> Dict[str, Any]:
        raise NotImplementedError

    def input_files(self) -> List[Path]:
        return []

    def run_stage(self) -> Dict[str, Path]:
        raise NotImplementedError

    # ------------------------------------------------------------------
    # 缓存
    # ------------------------------------------------------------------
    def cache_key(self) -> str:
        """SHA-256(阶段名, 配置子集, 输入文件内容哈希)"""
        payload = {
            "stage": self.stage.value,
            "config": self.config_subset(),
            "inputs": list(files_digest(self.input_files()).values()),
        }
        return canonical_hash(payload)

    def _cache_path(self) -> Path:
        return self.cache_dir / f"{self.stage.value}.json"

    def cached_outputs(self, key: str) -> Optional[Dict[str, str]]:
        """缓存键一致且产物未被改动时返回产物"""
        path = self._cache_path()
        if not path.exists():
            return None
        try:
            record = CacheRecord(**load_metadata(path))
        except (ValueError, TypeError):
            return None
        if record.key != key:
            return None
        for rel, digest in record.hashes.items():
            target = self.run_dir / rel
            if not target.exists() or file_sha256(target) != digest:
                return None
        return record.outputs

    def store_cache(self, key: str, outputs: Dict[str, Path]) -> None:
        rel_outputs = {name: self.to_run_rel(path) for name, path in outputs.items()}
        hashes = {}
        for rel in sorted(set(rel_outputs.values())):
            target = self.run_dir / rel
            if target.is_file():
                hashes[rel] = file_sha256(target)
        metadata = CacheRecord(stage=self.stage.value, key=key, outputs=rel_outputs, hashes=hashes).model_dump()
        update_timestamp(metadata)
        save_metadata(self._cache_path(), metadata)

    def execute(self, use_cache: bool = True) -> StageResult:
        """执行阶段（命中缓存时直接返回），失败时抛出带退出码的 StageError"""
        try:
            key = self.cache_key()
            cached = self.cached_outputs(key) if use_cache else None
            if cached is not None:
                logger.info(f"[{self.stage.value}] 命中缓存 {key[:12]}")
                return StageResult(stage=self.stage, cache=CacheStatus.HIT, cache_key=key, outputs=cached,
                                   message=f"{self.stage.value} 命中缓存")
            logger.info(f"[{self.stage.value}] 未命中缓存，开始执行")
            outputs = self.run_stage()
            self.store_cache(key, outputs)
            return StageResult(
                stage=self.stage,
                cache=CacheStatus.MISS,
                cache_key=key,
                outputs={name: self.to_run_rel(path) for name, path in outputs.items()},
                message=f"{self.stage.value} 完成",
            )
        except StageError:
            raise
        except (ScreenError, OSError, ValueError, KeyError) as e:
            raise StageError(self.stage.value, self.stage.exit_code, e) from e

    # ------------------------------------------------------------------
    # 数据
    # ------------------------------------------------------------------
    def preprocessed_paths(self) -> Dict[str, Path]:
        directory = self.run_dir / StageName.PREPROCESS.directory
        return {
            "manifest": directory / "manifest.csv",
            "channel_stats": directory / "channel_stats.json",
            "image_hashes": directory / "image_hashes.json",
        }

    def load_preprocessed(self) -> tuple:
        """加载预处理后的清单与通道统计"""
        paths = self.preprocessed_paths()
        manifest = load_manifest(paths["manifest"], merge_controls=self.config.split.merge_controls)
        stats = ChannelStats(**load_metadata(paths["channel_stats"]))
        return manifest, stats

    def load_normalized(self, record: SampleRecord, stats: ChannelStats) -> np.ndarray:
        image = MultiChannelImage(read_channels(record.image_paths))
        return normalize(image, stats).pixels

    def build_dataset(
        self,
        manifest: Manifest,
        records: Sequence[SampleRecord],
        stats: ChannelStats,
        grid: Optional[GridConfig] = None,
    ) -> BagDataset:
        """读取并归一化图像，构建包数据集；无二分类标签的样本被跳过"""
        grid = grid or self.config.grid
        labeled = [(r, manifest.label_of(r)) for r in records]
        labeled = [(r, y) for r, y in labeled if y is not None]
        if manifest.channel_count != stats.channels:
            raise ChannelMismatchError(f"清单通道数 {manifest.channel_count} 与通道统计 {stats.channels} 不一致")
        jobs = self.config.jobs
        if jobs > 1 and len(labeled) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                images = list(pool.map(lambda item: self.load_normalized(item[0], stats), labeled))
        else:
            images = [self.load_normalized(r, stats) for r, _ in labeled]
        return BagDataset([r.sample_id for r, _ in labeled], images, [y for _, y in labeled], grid)

    def require_nonempty(self, dataset: BagDataset, name: str) -> BagDataset:
        if len(dataset) == 0:
            raise EmptyInputError(f"{name} 数据集为空")
        return dataset

    def checkpoint_path(self) -> Path:
        return self.run_dir / StageName.TRAIN.directory / "checkpoint.json"

    def load_trained(self, manifest: Manifest) -> Checkpoint:
        """加载训练阶段检查点并校验通道数"""
        return load_checkpoint(self.checkpoint_path(), expected_channels=manifest.channel_count)

    def score_records(self, checkpoint: Checkpoint, records: Sequence[SampleRecord]) -> List[PatchScoreSet]:
        return score_records(checkpoint, records, self.config.train.chunk_size, self.config.jobs)


def score_records(
    checkpoint: Checkpoint,
    records: Sequence[SampleRecord],
    chunk_size: int = 256,
    jobs: int = 1,
    k: Optional[KValue] = None,
) -> List[PatchScoreSet]:
    """对任意样本（无需标签）做穷举切块推断，按输入顺序返回"""
    grid = checkpoint.grid
    k = checkpoint.k if k is None else k
    for record in records:
        if len(record.image_paths) != checkpoint.channels:
            raise CheckpointMismatchError(
                f"样本 {record.sample_id} 有 {len(record.image_paths)} 个通道，检查点需要 {checkpoint.channels} 个"
            )

    def _score(record: SampleRecord) -> PatchScoreSet:
        image = MultiChannelImage(read_channels(record.image_paths))
        pixels = normalize(image, checkpoint.stats).pixels
        mu = checkpoint.model.predict_proba(patch_array(pixels, grid), chunk_size=chunk_size)
        shape = grid.grid_shape(pixels.shape[1], pixels.shape[2])
        return PatchScoreSet.build(record.sample_id, mu, k, grid_shape=shape)

    if jobs > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_score, records))
    return [_score(r) for r in records]
