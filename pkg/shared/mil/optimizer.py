"""
优化器与学习率调度
"""

from __future__ import annotations

import math

import numpy as np

DIV_FACTOR = 25.0


def _cosine(start: float, end: float, pct: float) -> float:
    """pct 从0到1时由 start 余弦过渡到 end"""
    return end + (start - end) / 2.0 * (math.cos(math.pi * pct) + 1.0)


def one_cycle_lr(
    step: int,
    total_steps: int,
    peak: float,
    warmup_fraction: float = 0.3,
    div_factor: float = DIV_FACTOR,
) -> float:
    """
    one-cycle 余弦学习率

    从 peak/div_factor 余弦升到 peak（前 warmup_fraction 的步数），再余弦退火回 peak/div_factor。
    """
    if total_steps <= 0:
        raise ValueError(f"total_steps 必须 > 0: {total_steps}")
    floor = peak / div_factor
    if total_steps == 1:
        return floor
    step = min(max(step, 0), total_steps - 1)
    warmup_end = warmup_fraction * (total_steps - 1)
    if warmup_end > 0 and step <= warmup_end:
        return _cosine(floor, peak, step / warmup_end)
    span = (total_steps - 1) - warmup_end
    return _cosine(peak, floor, (step - warmup_end) / span) if span > 0 else floor


class AdamOptimizer:
    """一维参数向量上的 Adam（带偏差修正）"""

    def __init__(self, n_params: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        """返回更新后的参数（不修改输入）"""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * np.square(grad)
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - lr * m_hat / (np.sqrt(v_hat) + self.eps)
