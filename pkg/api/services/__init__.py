"""
DEEMD - 服务层模块

每个流水线阶段一个服务文件:
- synth_service.py: 合成筛选生成
- preprocess_service.py: 细胞核计数、空样本剔除、数据集划分、通道统计
- train_service.py: top-k MIL 训练
- eval_service.py: 未给药测试集评估与基线对比
- map_service.py: 感染图与叠加图
- score_service.py: 药效评分与排名
- k_selection_service.py: k 值选择
- screen_service.py: 完整流程编排
"""

from .synth_service import SynthService, synth_service
from .preprocess_service import PreprocessService, preprocess_service
from .train_service import TrainService, train_service
from .eval_service import EvalService, eval_service
from .map_service import MapService, emit_map_overlays, map_service
from .score_service import ScoreService, score_service
from .k_selection_service import KSelectionService, k_selection_service
from .screen_service import run_screen

__all__ = [
    # 阶段服务类
    "SynthService",
    "PreprocessService",
    "TrainService",
    "EvalService",
    "MapService",
    "ScoreService",
    "KSelectionService",

    # 服务函数
    "synth_service",
    "preprocess_service",
    "train_service",
    "eval_service",
    "map_service",
    "score_service",
    "k_selection_service",
    "emit_map_overlays",
    "run_screen",
]
