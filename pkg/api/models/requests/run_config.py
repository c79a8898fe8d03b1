"""
运行配置模型

优先级：默认值 < 配置文件 < 命令行参数。
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from shared.data_processors.image_processor import GridConfig
from shared.data_processors.synth_screen import SynthConfig
from shared.mil.scorer import LossConfig
from shared.mil.trainer import TrainConfig
from shared.analysis_tools.k_selection import DEFAULT_CANDIDATES, TIE_TOLERANCE
from shared.utilities.errors import ConfigError
from shared.utilities.file_utils import load_config

from ..enums import MapSampleScope


class SplitSettings(BaseModel):
    """数据集划分"""
    fractions: Tuple[float, float, float] = Field((0.6, 0.2, 0.2), description="Train/Validation/UntreatedTest 比例")
    merge_controls: bool = Field(True, description="合并 Mock 与 UV 灭活对照为非感染类")


class PreprocessSettings(BaseModel):
    """预处理与细胞核计数"""
    dna_channel: int = Field(0, ge=0, description="DNA染色通道序号（从0开始）")
    min_area: int = Field(20, ge=1, description="细胞核最小面积（像素）")
    seed_radius: int = Field(3, ge=1, description="分水岭种子抑制半径（像素）")
    stitch_sites: bool = Field(True, description="孔位含1-4号视野时拼接后计数")
    exclude_empty: bool = Field(True, description="剔除未检测到细胞的样本")


class LossSettings(BaseModel):
    """类别权重；为空时按训练集类别频率自动计算"""
    w_plus: Optional[float] = Field(None, gt=0, description="阳性类权重")
    w_minus: Optional[float] = Field(None, gt=0, description="阴性类权重")

    def resolve(self, n_positive: int, n_negative: int) -> LossConfig:
        auto = LossConfig.from_class_counts(n_positive, n_negative)
        return LossConfig(
            w_plus=self.w_plus if self.w_plus is not None else auto.w_plus,
            w_minus=self.w_minus if self.w_minus is not None else auto.w_minus,
        )


class EvalSettings(BaseModel):
    """评估"""
    compare_baselines: bool = Field(False, description="同时训练并评估 k=N 与整图基线")


class MapSettings(BaseModel):
    """感染图"""
    alpha: float = Field(0.2, gt=0, lt=1, description="幂加权指数 α")
    sigma: float = Field(60.0, ge=0, description="高斯平滑 σ（像素）")
    samples: MapSampleScope = Field(MapSampleScope.TEST, description="生成感染图的样本范围")
    max_samples: Optional[int] = Field(None, gt=0, description="最多生成的样本数")
    overlays: bool = Field(True, description="是否输出叠加图")
    export_csv: bool = Field(False, description="是否导出感染图数值CSV")


class EfficacySettings(BaseModel):
    """药效评分"""
    zeta: float = Field(0.5, gt=0, lt=1, description="有效阈值 ζ")
    confidence: float = Field(0.95, gt=0, lt=1, description="符号检验置信水平")
    top_n_plot: int = Field(8, ge=1, description="剂量-效应图中展示的药物数")


class KSelectionSettings(BaseModel):
    """k 值选择"""
    candidates: Tuple[int, ...] = Field(DEFAULT_CANDIDATES, min_length=1, description="候选 k")
    moi: float = Field(0.4, ge=0, description="感染复数")
    tie_tolerance: float = Field(TIE_TOLERANCE, ge=0, description="比例距离的并列容差")


class RunConfig(BaseModel):
    """完整运行配置"""
    run_dir: Path = Field(Path("runs/default"), description="运行目录")
    manifest: Optional[Path] = Field(None, description="清单路径；为空时使用合成数据")
    seed: int = Field(0, description="全局随机种子")
    jobs: int = Field(1, ge=1, description="并行工作线程数")
    grid: GridConfig = Field(default_factory=lambda: GridConfig(patch_size=256, stride=128, expected_patches=49))
    split: SplitSettings = Field(default_factory=SplitSettings)
    preprocess: PreprocessSettings = Field(default_factory=PreprocessSettings)
    train: TrainConfig = Field(default_factory=TrainConfig)
    loss: LossSettings = Field(default_factory=LossSettings)
    eval: EvalSettings = Field(default_factory=EvalSettings)
    maps: MapSettings = Field(default_factory=MapSettings)
    efficacy: EfficacySettings = Field(default_factory=EfficacySettings)
    select_k: KSelectionSettings = Field(default_factory=KSelectionSettings)
    synth: Optional[SynthConfig] = Field(None, description="合成筛选配置")

    @field_validator("manifest", mode="before")
    @classmethod
    def _empty_manifest(cls, value):
        return value or None

    @model_validator(mode="after")
    def _propagate_seed(self) -> "RunConfig":
        # 全局种子覆盖各子配置的种子
        self.train = self.train.model_copy(update={"seed": self.seed})
        if self.synth is not None:
            self.synth = self.synth.model_copy(update={"seed": self.seed})
        if self.manifest is None and self.synth is None:
            raise ValueError("必须提供 manifest 或 synth 配置之一")
        return self

    def thresholds(self) -> Dict[str, Any]:
        """写入运行元数据的阈值"""
        return {
            "k": self.train.k,
            "eta": self.train.eta,
            "zeta": self.efficacy.zeta,
            "confidence": self.efficacy.confidence,
            "alpha": self.maps.alpha,
            "sigma": self.maps.sigma,
        }


def apply_overrides(config: RunConfig, **overrides: Any) -> RunConfig:
    """
    命令行参数覆盖配置（None 表示未指定）

    支持：seed, jobs, k, eta, zeta, alpha, sigma, run_dir
    """
    data = config.model_dump(mode="json")
    values = {key: value for key, value in overrides.items() if value is not None}
    for key in ("seed", "jobs", "run_dir"):
        if key in values:
            data[key] = str(values[key]) if key == "run_dir" else values[key]
    if "k" in values:
        data["train"]["k"] = _parse_k(values["k"])
    if "eta" in values:
        data["train"]["eta"] = values["eta"]
    if "zeta" in values:
        data["efficacy"]["zeta"] = values["zeta"]
    if "alpha" in values:
        data["maps"]["alpha"] = values["alpha"]
    if "sigma" in values:
        data["maps"]["sigma"] = values["sigma"]
    try:
        return RunConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"命令行参数无效: {e}")


def _parse_k(value: Union[str, int]) -> Union[str, int]:
    if isinstance(value, str) and value.lower() == "all":
        return "all"
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"k 必须为正整数或 'all': {value}")


def load_run_config(path: Optional[Path]) -> RunConfig:
    """
    加载 JSON 配置文件；相对的 manifest 路径按配置文件所在目录解析
    """
    if path is None:
        data: Dict[str, Any] = {}
        base = Path.cwd()
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"配置文件不存在: {path}")
        try:
            data = load_config(path)
        except ValueError as e:
            raise ConfigError(f"配置文件格式错误 {path}: {e}")
        base = path.parent
    if data.get("manifest"):
        manifest = Path(data["manifest"])
        data["manifest"] = str(manifest if manifest.is_absolute() else base / manifest)
    try:
        return RunConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"配置无效: {e}")
