"""
完整筛选编排服务 - 按顺序执行各阶段并写出 report.json
"""

import logging
from pathlib import Path
from typing import List

from shared.utilities.file_utils import file_sha256, load_metadata, save_metadata

from ..models import RunConfig, ScreenReport, StageName, StageResult
from .eval_service import EvalService
from .map_service import MapService
from .preprocess_service import PreprocessService
from .score_service import ScoreService
from .synth_service import SynthService
from .train_service import TrainService

logger = logging.getLogger(__name__)


def screen_stages(config: RunConfig) -> List[type]:
    """按执行顺序排列的阶段服务"""
    stages = [PreprocessService, TrainService, EvalService, MapService, ScoreService]
    if config.manifest is None:
        stages.insert(0, SynthService)
    return stages


def build_report(config: RunConfig, results: List[StageResult]) -> ScreenReport:
    """汇总各阶段产物（不含时间戳，保证重跑一致）"""
    run_dir = Path(config.run_dir)
    preprocess_dir = run_dir / StageName.PREPROCESS.directory
    eval_info = load_metadata(run_dir / StageName.EVAL.directory / "eval.json")
    score_info = load_metadata(run_dir / StageName.SCORE.directory / "run_metadata.json")
    return ScreenReport(
        success=True,
        message="筛选完成",
        config=config.model_dump(mode="json"),
        thresholds=config.thresholds(),
        dataset_hashes={
            "manifest": file_sha256(preprocess_dir / "manifest.csv"),
            "images": file_sha256(preprocess_dir / "image_hashes.json"),
            "channel_stats": file_sha256(preprocess_dir / "channel_stats.json"),
        },
        validation_ap=eval_info.get("validation_ap"),
        test_ap=eval_info.get("test_ap"),
        effective_set=score_info.get("effective_set", []),
        stages=results,
    )


def run_screen(config: RunConfig, use_cache: bool = True) -> ScreenReport:
    """
    完整运行：[synth] → preprocess → train → eval → map → score

    任一阶段失败时抛出带该阶段退出码的 StageError，后续阶段不执行。
    """
    results: List[StageResult] = []
    for service_cls in screen_stages(config):
        result = service_cls(config).execute(use_cache=use_cache)
        logger.info(f"[{result.stage.value}] {result.cache.value}")
        results.append(result)

    report = build_report(config, results)
    report_path = Path(config.run_dir) / "report.json"
    save_metadata(report_path, report.model_dump(mode="json"))
    hits = sum(1 for r in results if r.cache.value == "hit")
    logger.info(f"报告已保存: {report_path}（{hits}/{len(results)} 个阶段命中缓存）")
    return report
