"""
流水线子命令

每个子命令加载配置（默认值 < 配置文件 < 命令行参数），执行对应阶段并输出阶段结果 JSON。
"""

import functools
import logging
from pathlib import Path
from typing import Any, Callable, Optional

import click

from shared.utilities.config_utils import get_env_config

from ..models import RunConfig, apply_overrides, load_run_config
from ..services import (
    eval_service,
    k_selection_service,
    map_service,
    preprocess_service,
    run_screen,
    score_service,
    synth_service,
    train_service,
)
from .middleware import handle_stage_errors

logger = logging.getLogger(__name__)


def run_options(func: Callable) -> Callable:
    """所有子命令共用的配置与覆盖参数，解析后以 config / use_cache 调用命令"""

    @functools.wraps(func)
    def wrapper(config_path: Optional[Path], no_cache: bool, **overrides: Any):
        config = load_run_config(config_path)
        # DEEMD_JOBS 只替代默认值，不覆盖配置文件
        if overrides.get("jobs") is None and "jobs" not in config.model_fields_set:
            overrides["jobs"] = get_env_config()["jobs"]
        config = apply_overrides(config, **overrides)
        return func(config=config, use_cache=not no_cache)

    options = [
        click.option("--config", "config_path", type=click.Path(path_type=Path), default=None, help="JSON 运行配置文件"),
        click.option("--seed", type=int, default=None, help="全局随机种子"),
        click.option("--jobs", type=click.IntRange(min=1), default=None, help="并行工作线程数（默认读取 DEEMD_JOBS）"),
        click.option("--k", "k", type=str, default=None, help="top-k 中的 k（正整数或 all）"),
        click.option("--eta", type=float, default=None, help="包判定阈值 η"),
        click.option("--zeta", type=float, default=None, help="有效阈值 ζ"),
        click.option("--alpha", type=float, default=None, help="感染图幂加权指数 α"),
        click.option("--sigma", type=float, default=None, help="感染图高斯平滑 σ"),
        click.option("--run-dir", type=click.Path(path_type=Path), default=None, help="运行目录"),
        click.option("--no-cache", is_flag=True, default=False, help="忽略阶段缓存强制重跑"),
    ]
    for option in reversed(options):
        wrapper = option(wrapper)
    return wrapper


def stage_command(name: str, service: Callable, help_text: str) -> click.Command:
    """由阶段服务函数生成子命令"""

    @handle_stage_errors
    @run_options
    def command(config: RunConfig, use_cache: bool) -> None:
        result = service(config, use_cache=use_cache)
        click.echo(result.model_dump_json(indent=2))

    return click.command(name, help=help_text)(command)


synth_command = stage_command("synth", synth_service, "生成合成筛选")
preprocess_command = stage_command("preprocess", preprocess_service, "细胞核计数、空样本剔除、数据集划分与通道统计")
train_command = stage_command("train", train_service, "top-k MIL 训练")
eval_command = stage_command("eval", eval_service, "未给药测试集评估")
map_command = stage_command("map", map_service, "生成感染图与叠加图")
score_command = stage_command("score", score_service, "药效评分与排名")
select_k_command = stage_command("select-k", k_selection_service, "按泊松理论感染比例选择 k")


@click.command("screen")
@handle_stage_errors
@run_options
def screen_command(config: RunConfig, use_cache: bool) -> None:
    """完整流程：[synth] → preprocess → train → eval → map → score"""
    report = run_screen(config, use_cache=use_cache)
    click.echo(f"有效药物: {', '.join(report.effective_set) or '（无）'}")
    click.echo(f"报告: {Path(config.run_dir) / 'report.json'}")


PIPELINE_COMMANDS = [
    synth_command,
    preprocess_command,
    train_command,
    eval_command,
    map_command,
    score_command,
    screen_command,
    select_k_command,
]
