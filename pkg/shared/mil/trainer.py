"""
top-k 多示例学习训练

每个 epoch 三步：
1. 用 epoch 开始时冻结的 θ 对全部切块做穷举推断；
2. 每个样本取 μ 最高的 k 个切块，赋予包标签；
3. 在这些实例上做小批量 Adam 更新（one-cycle 余弦学习率）。
验证集 AP 用于早停（AP 持平时比较验证损失），结束时恢复最佳参数。
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator

from shared.data_processors.image_processor import GridConfig, patch_array
from shared.mil.bag_inference import PatchScoreSet, bag_score, resolve_k
from shared.mil.metrics import evaluate_ap
from shared.mil.optimizer import DIV_FACTOR, AdamOptimizer, one_cycle_lr
from shared.mil.scorer import LossConfig, ScorerModel, weighted_bce_terms
from shared.utilities.errors import EmptyInputError, RankOutOfRangeError, ShapeMismatchError
from shared.utilities.file_utils import save_table

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "train_loss", "val_loss", "val_ap", "lr"]

AP_TIE_TOLERANCE = 1e-12


class TrainConfig(BaseModel):
    """训练超参数"""
    k: Union[int, Literal["all"]] = Field(2, description="top-k 中的 k，'all' 表示 k=N")
    epochs: int = Field(150, ge=0, description="最大训练轮数")
    batch_size: int = Field(128, gt=0, description="批大小")
    learning_rate: float = Field(1e-4, gt=0, description="峰值学习率")
    beta1: float = Field(0.9, ge=0, lt=1, description="Adam β1")
    beta2: float = Field(0.999, ge=0, lt=1, description="Adam β2")
    warmup_fraction: float = Field(0.3, ge=0, le=1, description="one-cycle 升温阶段占比")
    div_factor: float = Field(DIV_FACTOR, gt=1, description="最低学习率 = 峰值 / div_factor")
    patience: int = Field(10, ge=1, description="早停耐心（epoch）")
    eta: float = Field(0.5, gt=0, lt=1, description="包判定阈值 η")
    seed: int = Field(0, description="随机种子")
    conv_channels: Tuple[int, ...] = Field((8, 16, 32), min_length=1, description="卷积块通道数")
    chunk_size: int = Field(256, gt=0, description="推断时每次前向的切块数")

    @field_validator("k")
    @classmethod
    def _check_k(cls, value):
        if isinstance(value, int) and value < 1:
            raise ValueError("k 必须 >= 1")
        return value


class BagDataset:
    """
    已归一化的样本图像（包）及其标签

    切块在需要时以视图方式取出，不预先展开。
    """

    def __init__(self, sample_ids: Sequence[str], images: Sequence[np.ndarray], labels: Sequence[int], grid: GridConfig):
        if not (len(sample_ids) == len(images) == len(labels)):
            raise ShapeMismatchError("样本ID、图像与标签数量不一致")
        self.sample_ids = list(sample_ids)
        self.images = [np.asarray(img, dtype=np.float64) for img in images]
        self.labels = np.asarray(labels, dtype=int)
        self.grid = grid
        self.grid_shape: Optional[Tuple[int, int]] = None
        for sid, img in zip(self.sample_ids, self.images):
            shape = grid.grid_shape(img.shape[1], img.shape[2])
            if self.grid_shape is None:
                self.grid_shape = shape
            elif shape != self.grid_shape:
                raise ShapeMismatchError(f"样本 {sid} 的网格 {shape} 与其他样本 {self.grid_shape} 不一致")

    def __len__(self) -> int:
        return len(self.sample_ids)

    @property
    def n_patches(self) -> int:
        rows, cols = self.grid_shape or (0, 0)
        return rows * cols

    @property
    def channels(self) -> int:
        return self.images[0].shape[0] if self.images else 0

    def patches(self, index: int) -> np.ndarray:
        return patch_array(self.images[index], self.grid)

    def subset(self, indices: Sequence[int]) -> "BagDataset":
        return BagDataset(
            [self.sample_ids[i] for i in indices],
            [self.images[i] for i in indices],
            self.labels[list(indices)],
            self.grid,
        )


@dataclass
class TrainingResult:
    """训练结果"""
    model: ScorerModel
    history: pd.DataFrame
    best_epoch: int
    best_val_ap: float
    stopped_early: bool


def exhaustive_inference(
    model: ScorerModel,
    dataset: BagDataset,
    k: Union[int, str],
    chunk_size: int = 256,
    jobs: int = 1,
) -> List[PatchScoreSet]:
    """用固定 θ 对每个样本的全部切块打分（按样本顺序返回）"""

    def _score(index: int) -> PatchScoreSet:
        mu = model.predict_proba(dataset.patches(index), chunk_size=chunk_size)
        return PatchScoreSet.build(dataset.sample_ids[index], mu, k, grid_shape=dataset.grid_shape)

    if jobs > 1 and len(dataset) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_score, range(len(dataset))))
    return [_score(i) for i in range(len(dataset))]


def mil_loss_from_scores(score_sets: Sequence[PatchScoreSet], labels: Sequence[int], loss_cfg: LossConfig) -> float:
    """每个包 top-k 切块的平均加权交叉熵，再对包取平均"""
    if not score_sets:
        raise EmptyInputError("计算MIL损失需要至少一个样本")
    per_bag = []
    for score_set, label in zip(score_sets, labels):
        mu = score_set.scores[list(score_set.top_k)]
        per_bag.append(weighted_bce_terms(mu, np.full(mu.shape, label), loss_cfg).mean())
    return float(np.mean(per_bag))


def mil_loss(model: ScorerModel, dataset: BagDataset, k: Union[int, str], loss_cfg: LossConfig, chunk_size: int = 256) -> float:
    """数据集级 MIL 损失（逐样本 top-k 损失的平均）"""
    return mil_loss_from_scores(exhaustive_inference(model, dataset, k, chunk_size), dataset.labels, loss_cfg)


def validation_ap(model: ScorerModel, dataset: BagDataset, k: Union[int, str], chunk_size: int = 256, jobs: int = 1) -> float:
    """验证集上以 m(M,k) 为连续分数的 AP"""
    score_sets = exhaustive_inference(model, dataset, k, chunk_size, jobs)
    return evaluate_ap([bag_score(s) for s in score_sets], dataset.labels).average_precision


def validation_metrics(
    model: ScorerModel,
    dataset: BagDataset,
    k: Union[int, str],
    loss_cfg: LossConfig,
    chunk_size: int = 256,
    jobs: int = 1,
) -> Tuple[float, float]:
    """一次推断同时得到验证集 (AP, MIL损失)"""
    score_sets = exhaustive_inference(model, dataset, k, chunk_size, jobs)
    ap = evaluate_ap([bag_score(s) for s in score_sets], dataset.labels).average_precision
    return ap, mil_loss_from_scores(score_sets, dataset.labels, loss_cfg)


def improves(val_ap: float, val_loss: float, best_ap: float, best_loss: float) -> bool:
    """AP 更高，或 AP 持平且验证损失更低"""
    if val_ap > best_ap + AP_TIE_TOLERANCE:
        return True
    return abs(val_ap - best_ap) <= AP_TIE_TOLERANCE and val_loss < best_loss


class MILTrainer:
    """top-k MIL 训练器"""

    def __init__(self, cfg: TrainConfig, loss_cfg: LossConfig, jobs: int = 1):
        self.cfg = cfg
        self.loss_cfg = loss_cfg
        self.jobs = jobs

    def _instances(self, score_sets: Sequence[PatchScoreSet], labels: np.ndarray) -> List[Tuple[int, int, int]]:
        return [(i, j, int(labels[i])) for i, s in enumerate(score_sets) for j in s.top_k]

    def train(
        self,
        model: ScorerModel,
        train_set: BagDataset,
        val_set: Optional[BagDataset] = None,
        log_path: Optional[Path] = None,
    ) -> TrainingResult:
        cfg = self.cfg
        if len(train_set) == 0:
            raise EmptyInputError("训练集为空")
        k = resolve_k(cfg.k, train_set.n_patches)
        if k > train_set.n_patches:
            raise RankOutOfRangeError(f"k={k} 大于每个样本的切块数 {train_set.n_patches}")

        current = model.copy()
        history_rows: List[dict] = []
        if cfg.epochs == 0:
            logger.info("epochs=0，返回原模型")
            history = pd.DataFrame(history_rows, columns=LOG_COLUMNS)
            if log_path is not None:
                save_table(Path(log_path), history)
            return TrainingResult(current, history, 0, float("nan"), False)

        rng = np.random.default_rng(cfg.seed)
        optimizer = AdamOptimizer(current.n_params, cfg.beta1, cfg.beta2)
        n_instances = len(train_set) * k
        steps_per_epoch = math.ceil(n_instances / cfg.batch_size)
        total_steps = cfg.epochs * steps_per_epoch
        use_val = val_set is not None and len(val_set) > 0

        best_model, best_ap, best_loss, best_epoch = current.copy(), -math.inf, math.inf, 0
        stale, stopped_early, global_step, lr = 0, False, 0, cfg.learning_rate / cfg.div_factor

        for epoch in range(1, cfg.epochs + 1):
            # (a)(b) 冻结 θ 的穷举推断与 top-k 选择
            score_sets = exhaustive_inference(current, train_set, k, cfg.chunk_size, self.jobs)
            instances = self._instances(score_sets, train_set.labels)
            order = rng.permutation(len(instances))

            # (c) 小批量更新，epoch 内不重新排序
            loss_sum = 0.0
            for start in range(0, len(order), cfg.batch_size):
                batch = [instances[i] for i in order[start:start + cfg.batch_size]]
                patches = np.stack([train_set.patches(b)[j] for b, j, _ in batch])
                labels = np.array([y for _, _, y in batch], dtype=np.float64)
                loss, grad = current.loss_and_gradient(patches, labels, self.loss_cfg)
                lr = one_cycle_lr(global_step, total_steps, cfg.learning_rate, cfg.warmup_fraction, cfg.div_factor)
                current.theta = optimizer.step(current.theta, grad, lr)
                loss_sum += loss * len(batch)
                global_step += 1
            train_loss = loss_sum / len(instances)

            if use_val:
                val_ap, val_loss = validation_metrics(current, val_set, k, self.loss_cfg, cfg.chunk_size, self.jobs)
            else:
                val_ap, val_loss = float("nan"), float("nan")
            history_rows.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "val_ap": val_ap, "lr": lr})
            logger.info(
                f"epoch {epoch}/{cfg.epochs}: loss={train_loss:.4f}, val_loss={val_loss:.4f}, "
                f"val_ap={val_ap:.4f}, lr={lr:.2e}"
            )

            if not use_val:
                best_model, best_epoch = current.copy(), epoch
                continue
            if improves(val_ap, val_loss, best_ap, best_loss):
                best_model, best_ap, best_loss, best_epoch, stale = current.copy(), val_ap, val_loss, epoch, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    stopped_early = True
                    logger.info(f"验证AP与损失连续 {cfg.patience} 个epoch未改善，在第 {epoch} 个epoch早停")
                    break

        if use_val:
            logger.info(f"恢复第 {best_epoch} 个epoch的最佳参数 (val_ap={best_ap:.4f}, val_loss={best_loss:.4f})")
        history = pd.DataFrame(history_rows, columns=LOG_COLUMNS)
        if log_path is not None:
            save_table(Path(log_path), history)
        return TrainingResult(best_model, history, best_epoch, best_ap if use_val else float("nan"), stopped_early)


def train(
    train_set: BagDataset,
    model: ScorerModel,
    cfg: TrainConfig,
    loss_cfg: LossConfig,
    val_set: Optional[BagDataset] = None,
    log_path: Optional[Path] = None,
    jobs: int = 1,
) -> TrainingResult:
    """训练入口"""
    return MILTrainer(cfg, loss_cfg, jobs).train(model, train_set, val_set, log_path)
