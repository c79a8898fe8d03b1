"""
请求模型
"""

from .run_config import (
    EfficacySettings,
    EvalSettings,
    KSelectionSettings,
    LossSettings,
    MapSettings,
    PreprocessSettings,
    RunConfig,
    SplitSettings,
    apply_overrides,
    load_run_config,
)

__all__ = [
    "EfficacySettings",
    "EvalSettings",
    "KSelectionSettings",
    "LossSettings",
    "MapSettings",
    "PreprocessSettings",
    "RunConfig",
    "SplitSettings",
    "apply_overrides",
    "load_run_config",
]
