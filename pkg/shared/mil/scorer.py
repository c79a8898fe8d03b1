"""
实例打分器 M(θ)

小型卷积网络（3x3 卷积 / 步长2 / ReLU）→ 全局平均池化 → 仿射 → sigmoid，
把归一化后的切块映射为感染概率 μ。参数以一维向量 θ 存储，按层切片访问。
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import expit

from shared.utilities.errors import DomainError, EmptyInputError, ShapeMismatchError

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
LOGIT_CLAMP = math.log((1.0 - PROB_CLAMP) / PROB_CLAMP)
KERNEL = 3
STRIDE = 2
MIN_CHECKED_PARAMS = 100


class ArchitectureSpec(BaseModel):
    """网络结构描述"""
    model_config = ConfigDict(frozen=True)

    in_channels: int = Field(5, gt=0, description="输入通道数")
    patch_size: int = Field(256, gt=0, description="输入切块边长")
    conv_channels: Tuple[int, ...] = Field((8, 16, 32), min_length=1, description="各卷积块输出通道数")

    def feature_sizes(self) -> List[int]:
        """每个卷积块输出的空间尺寸"""
        sizes = []
        size = self.patch_size
        for _ in self.conv_channels:
            size = (size + 2 - KERNEL) // STRIDE + 1
            sizes.append(size)
        return sizes

    def layout(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """参数名与形状，按 θ 中的存储顺序"""
        shapes: List[Tuple[str, Tuple[int, ...]]] = []
        c_in = self.in_channels
        for i, c_out in enumerate(self.conv_channels):
            shapes.append((f"conv{i + 1}.weight", (c_out, c_in * KERNEL * KERNEL)))
            shapes.append((f"conv{i + 1}.bias", (c_out,)))
            c_in = c_out
        shapes.append(("head.weight", (c_in,)))
        shapes.append(("head.bias", (1,)))
        return shapes


class LossConfig(BaseModel):
    """类别加权交叉熵的权重"""
    model_config = ConfigDict(frozen=True)

    w_plus: float = Field(1.0, gt=0, description="阳性类权重 w+")
    w_minus: float = Field(1.0, gt=0, description="阴性类权重 w-")

    @field_validator("w_plus", "w_minus")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("类别权重必须为有限值")
        return value

    @classmethod
    def from_class_counts(cls, n_positive: int, n_negative: int) -> "LossConfig":
        """按训练集类别频率取倒数并归一化到均值1"""
        if n_positive <= 0 or n_negative <= 0:
            return cls()
        total = n_positive + n_negative
        return cls(w_plus=2.0 * n_negative / total, w_minus=2.0 * n_positive / total)


def weighted_bce_terms(mu: np.ndarray, y: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """逐实例 -[w+ y log μ + w- (1-y) log(1-μ)]"""
    mu = np.asarray(mu, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(~np.isfinite(mu)) or np.any(mu <= 0.0) or np.any(mu >= 1.0):
        raise DomainError("μ 必须位于开区间 (0,1)")
    return -(cfg.w_plus * y * np.log(mu) + cfg.w_minus * (1.0 - y) * np.log1p(-mu))


def weighted_bce(mu: float, y: int, cfg: LossConfig) -> float:
    """单个实例的类别加权二元交叉熵"""
    return float(weighted_bce_terms(np.array([mu]), np.array([y]), cfg)[0])


class ScorerModel:
    """
    实例打分器

    θ 为 float64 一维向量；内部使用通道在后的 [B,H,W,C] 布局，
    外部输入切块为 [B,C,P,P]。
    """

    def __init__(self, architecture: ArchitectureSpec, theta: Optional[np.ndarray] = None):
        self.architecture = architecture
        self._layout = architecture.layout()
        self._slices: Dict[str, Tuple[slice, Tuple[int, ...]]] = {}
        offset = 0
        for name, shape in self._layout:
            size = int(np.prod(shape))
            self._slices[name] = (slice(offset, offset + size), shape)
            offset += size
        self.n_params = offset
        if theta is None:
            theta = np.zeros(self.n_params)
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ShapeMismatchError(f"参数向量长度 {theta.shape} 与结构要求 {self.n_params} 不符")
        self.theta = theta.copy()

    @classmethod
    def initialize(cls, architecture: ArchitectureSpec, seed: int = 0, zero_head: bool = False) -> "ScorerModel":
        """按 fan-in 缩放的均匀分布初始化，偏置为0"""
        model = cls(architecture)
        rng = np.random.default_rng(seed)
        for name, shape in model._layout:
            if name.endswith(".bias"):
                continue
            if name == "head.weight":
                if zero_head:
                    continue
                bound = math.sqrt(3.0 / shape[0])
            else:
                bound = math.sqrt(6.0 / shape[1])
            model.param(name)[...] = rng.uniform(-bound, bound, size=shape)
        return model

    def param(self, name: str) -> np.ndarray:
        """参数视图（写入会修改 θ）"""
        sl, shape = self._slices[name]
        return self.theta[sl].reshape(shape)

    def layer_slices(self) -> Dict[str, slice]:
        return {name: sl for name, (sl, _) in self._slices.items()}

    def copy(self) -> "ScorerModel":
        return ScorerModel(self.architecture, self.theta)

    # ------------------------------------------------------------------
    # 前向 / 反向
    # ------------------------------------------------------------------
    def _check_input(self, patches: np.ndarray) -> np.ndarray:
        patches = np.asarray(patches, dtype=np.float64)
        arch = self.architecture
        expected = (arch.in_channels, arch.patch_size, arch.patch_size)
        if patches.ndim != 4 or patches.shape[1:] != expected:
            raise ShapeMismatchError(f"切块形状 {patches.shape[1:]} 与结构要求 {expected} 不符")
        if patches.shape[0] == 0:
            raise EmptyInputError("批次为空")
        return patches

    def _forward(self, patches: np.ndarray):
        x = np.transpose(patches, (0, 2, 3, 1))
        caches = []
        for i in range(len(self.architecture.conv_channels)):
            weight = self.param(f"conv{i + 1}.weight")
            bias = self.param(f"conv{i + 1}.bias")
            batch, height, width, _ = x.shape
            padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
            windows = sliding_window_view(padded, (KERNEL, KERNEL), axis=(1, 2))[:, ::STRIDE, ::STRIDE]
            out_h, out_w = windows.shape[1], windows.shape[2]
            cols = windows.reshape(batch * out_h * out_w, -1)
            pre = cols @ weight.T + bias
            active = pre > 0
            caches.append((cols, active, x.shape, (out_h, out_w)))
            x = np.where(active, pre, 0.0).reshape(batch, out_h, out_w, -1)
        pooled = x.mean(axis=(1, 2))
        z = pooled @ self.param("head.weight") + self.param("head.bias")[0]
        return z, pooled, caches

    def predict_proba(self, patches: np.ndarray, chunk_size: int = 256) -> np.ndarray:
        """批量前向，返回 [B] 个 μ"""
        patches = self._check_input(patches)
        outputs = []
        for start in range(0, patches.shape[0], chunk_size):
            z, _, _ = self._forward(patches[start:start + chunk_size])
            outputs.append(expit(np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)))
        return np.concatenate(outputs)

    def loss_and_gradient(self, patches: np.ndarray, labels: np.ndarray, cfg: LossConfig) -> Tuple[float, np.ndarray]:
        """批次平均加权交叉熵及其对 θ 的梯度"""
        patches = self._check_input(patches)
        labels = np.asarray(labels, dtype=np.float64)
        if labels.shape != (patches.shape[0],):
            raise ShapeMismatchError(f"标签数量 {labels.shape} 与批次大小 {patches.shape[0]} 不符")
        batch = patches.shape[0]
        z, pooled, caches = self._forward(patches)
        mu = expit(np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP))
        loss = float(weighted_bce_terms(mu, labels, cfg).mean())

        # dL/dz = (-w+ y (1-μ) + w- (1-y) μ) / B，饱和区同样回传
        dz = (-cfg.w_plus * labels * (1.0 - mu) + cfg.w_minus * (1.0 - labels) * mu) / batch
        grad = np.zeros(self.n_params)
        head_w = self.param("head.weight")
        grad[self._slices["head.weight"][0]] = pooled.T @ dz
        grad[self._slices["head.bias"][0]] = dz.sum()

        last_h, last_w = caches[-1][3]
        upstream = np.broadcast_to(np.outer(dz, head_w)[:, None, None, :] / (last_h * last_w),
                                   (batch, last_h, last_w, head_w.shape[0]))
        for i in reversed(range(len(caches))):
            cols, active, in_shape, (out_h, out_w) = caches[i]
            weight = self.param(f"conv{i + 1}.weight")
            dpre = upstream.reshape(-1, weight.shape[0]) * active
            grad[self._slices[f"conv{i + 1}.weight"][0]] = (dpre.T @ cols).ravel()
            grad[self._slices[f"conv{i + 1}.bias"][0]] = dpre.sum(axis=0)
            if i == 0:
                break
            _, height, width, c_in = in_shape
            dcols = (dpre @ weight).reshape(batch, out_h, out_w, c_in, KERNEL, KERNEL)
            dpadded = np.zeros((batch, height + 2, width + 2, c_in))
            for a in range(KERNEL):
                for b in range(KERNEL):
                    dpadded[:, a:a + STRIDE * (out_h - 1) + 1:STRIDE, b:b + STRIDE * (out_w - 1) + 1:STRIDE, :] += dcols[..., a, b]
            upstream = dpadded[:, 1:-1, 1:-1, :]
        return loss, grad

    def relu_pattern(self, patches: np.ndarray) -> np.ndarray:
        """所有 ReLU 单元的激活模式（梯度检验用于识别拐点）"""
        _, _, caches = self._forward(self._check_input(patches))
        return np.concatenate([cache[1].ravel() for cache in caches])

    def to_dict(self) -> Dict[str, object]:
        return {"architecture": self.architecture.model_dump(mode="json"), "theta": self.theta.tolist()}

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "ScorerModel":
        return cls(ArchitectureSpec(**payload["architecture"]), np.asarray(payload["theta"], dtype=np.float64))


def score_patch(model: ScorerModel, patch: np.ndarray) -> float:
    """单个切块 [C,P,P] 的感染概率"""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 3:
        raise ShapeMismatchError(f"切块必须为 [C,P,P]: {patch.shape}")
    return float(model.predict_proba(patch[None])[0])


def gradient(model: ScorerModel, patches: np.ndarray, labels: Sequence[int], cfg: LossConfig) -> np.ndarray:
    """批次平均加权交叉熵对 θ 的梯度"""
    return model.loss_and_gradient(patches, np.asarray(labels), cfg)[1]


class GradientCheckReport(BaseModel):
    """梯度检验报告"""
    max_rel_err: float = Field(..., description="最大相对误差")
    passed: bool = Field(..., description="是否通过")
    checked: int = Field(..., description="检验的参数个数")
    skipped_kinks: int = Field(0, description="因跨越ReLU拐点而替换的参数个数")
    worst_param: Optional[str] = Field(None, description="误差最大的参数所在层")


def _sample_indices(model: ScorerModel, n_params: int, rng: np.random.Generator) -> List[int]:
    """按层分层抽样，保证每层都有参数被检验"""
    slices = list(model.layer_slices().values())
    per_layer = max(1, math.ceil(n_params / len(slices)))
    chosen: List[int] = []
    for sl in slices:
        size = sl.stop - sl.start
        picks = rng.choice(size, size=min(size, per_layer), replace=False)
        chosen.extend(int(sl.start + p) for p in picks)
    if len(chosen) < n_params:
        remaining = np.setdiff1d(np.arange(model.n_params), chosen)
        extra = rng.choice(remaining, size=min(len(remaining), n_params - len(chosen)), replace=False)
        chosen.extend(int(i) for i in extra)
    return chosen


def check_gradients(
    model: ScorerModel,
    patches: np.ndarray,
    labels: Sequence[int],
    tolerance: float,
    cfg: Optional[LossConfig] = None,
    n_params: int = 128,
    step: float = 1e-4,
    seed: int = 0,
    gradient_fn: Optional[Callable[[ScorerModel, np.ndarray, np.ndarray, LossConfig], np.ndarray]] = None,
) -> GradientCheckReport:
    """
    中心差分梯度检验

    Args:
        tolerance: 最大允许相对误差，+inf 时总是通过
        n_params: 抽样检验的参数个数（至少100）；有限容差下实际检验数不足 min(n_params, 100) 时不通过
        gradient_fn: 替换解析梯度的实现（用于故障注入）
    """
    if not tolerance > 0:
        raise ValueError(f"tolerance 必须 > 0: {tolerance}")
    cfg = cfg or LossConfig()
    labels = np.asarray(labels, dtype=np.float64)
    n_params = min(max(n_params, MIN_CHECKED_PARAMS), model.n_params)
    analytic = (gradient_fn or gradient)(model, patches, labels, cfg)

    rng = np.random.default_rng(seed)
    base_pattern = model.relu_pattern(patches)
    perturbed = model.copy()
    candidates = _sample_indices(model, n_params, rng)
    taken = set(candidates)
    pool = [int(i) for i in rng.permutation(model.n_params) if int(i) not in taken]

    owner = {}
    for name, sl in model.layer_slices().items():
        owner.update({i: name for i in range(sl.start, sl.stop)})

    max_err, worst, checked, skipped = 0.0, None, 0, 0
    queue = list(candidates)
    while queue and checked < n_params:
        index = queue.pop(0)
        original = perturbed.theta[index]
        perturbed.theta[index] = original + step
        plus_pattern = perturbed.relu_pattern(patches)
        loss_plus = perturbed.loss_and_gradient(patches, labels, cfg)[0]
        perturbed.theta[index] = original - step
        minus_pattern = perturbed.relu_pattern(patches)
        loss_minus = perturbed.loss_and_gradient(patches, labels, cfg)[0]
        perturbed.theta[index] = original
        if not (np.array_equal(plus_pattern, base_pattern) and np.array_equal(minus_pattern, base_pattern)):
            skipped += 1
            if pool:
                queue.append(pool.pop(0))
            continue
        numeric = (loss_plus - loss_minus) / (2.0 * step)
        a = float(analytic[index])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-7)
        checked += 1
        if worst is None or err > max_err:
            max_err, worst = err, owner[index]

    required = min(n_params, MIN_CHECKED_PARAMS)
    passed = math.isinf(tolerance) or (max_err <= tolerance and checked >= required)
    if checked < required:
        logger.warning(f"梯度检验只检验了 {checked} 个参数，少于要求的 {required} 个")
    logger.info(f"梯度检验: 检验 {checked} 个参数, 跳过拐点 {skipped} 个, 最大相对误差 {max_err:.3e}")
    return GradientCheckReport(max_rel_err=max_err, passed=passed, checked=checked, skipped_kinks=skipped, worst_param=worst)
