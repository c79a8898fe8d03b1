"""
DEEMD - 命令行子命令模块

- pipeline_commands.py: 各流水线阶段与完整流程子命令
- middleware.py: 阶段错误到退出码的转换
"""

from .pipeline_commands import PIPELINE_COMMANDS

__all__ = ["PIPELINE_COMMANDS"]
