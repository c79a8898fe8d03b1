"""
命令行公共中间件和异常处理
"""

import functools
import logging
from typing import Any, Callable

import click

from shared.utilities.errors import ConfigError, StageError

from ..models import UNKNOWN_EXIT_CODE, StageName

logger = logging.getLogger(__name__)


def handle_stage_errors(func: Callable) -> Callable:
    """
    统一的阶段错误处理装饰器

    StageError -> 该阶段退出码；ConfigError -> 2；其他异常 -> 1
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs) -> Any:
        try:
            return func(*args, **kwargs)
        except (click.exceptions.Exit, click.ClickException, SystemExit):
            raise
        except StageError as e:
            logger.error(f"{e}（{getattr(e.cause, 'error_code', type(e.cause).__name__)}）")
            raise SystemExit(e.exit_code)
        except ConfigError as e:
            logger.error(f"配置错误: {e}")
            raise SystemExit(StageName.CONFIG.exit_code)
        except Exception as e:
            logger.exception(f"未预期的错误: {e}")
            raise SystemExit(UNKNOWN_EXIT_CODE)
    return wrapper
