"""
DEEMD - 命令行主程序入口
"""

import logging
import sys
from pathlib import Path

# 添加项目根目录到Python路径
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

import click  # noqa: E402
from rich.console import Console  # noqa: E402
from rich.logging import RichHandler  # noqa: E402

from api import __version__  # noqa: E402
from api.commands import PIPELINE_COMMANDS  # noqa: E402
from shared.utilities.config_utils import get_env_config  # noqa: E402


def configure_logging(level: str) -> None:
    """根日志器只配置一次"""
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), rich_tracebacks=True, show_path=False)],
        force=True,
    )


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default=None,
    help="日志级别（默认读取 DEEMD_LOG_LEVEL，否则 INFO）",
)
@click.version_option(__version__, prog_name="deemd")
def cli(log_level: str) -> None:
    """DEEMD：基于 top-k 多示例学习的高内涵药物筛选流水线"""
    configure_logging(log_level or get_env_config()["log_level"])


for command in PIPELINE_COMMANDS:
    cli.add_command(command)


if __name__ == "__main__":
    cli()
