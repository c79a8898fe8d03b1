"""
DEEMD 筛选工具 - 命令行与服务层
"""

__version__ = "1.0.0"
__author__ = "开发团队"
__description__ = "基于top-k多示例学习的感染识别与药效排名流水线"
