"""
top-k MIL 训练测试
"""
import numpy as np
import pandas as pd
import pytest

from shared.data_processors.image_processor import GridConfig
from shared.mil.scorer import ArchitectureSpec, LossConfig, ScorerModel, weighted_bce_terms
from shared.mil.trainer import (
    LOG_COLUMNS,
    BagDataset,
    MILTrainer,
    TrainConfig,
    exhaustive_inference,
    improves,
    mil_loss,
    train,
    validation_ap,
)
from shared.utilities.errors import EmptyInputError, RankOutOfRangeError, ShapeMismatchError

GRID = GridConfig(patch_size=8, stride=8)


def _bags(n_per_class: int = 4, seed: int = 0, signal: float = 3.0) -> BagDataset:
    """16x16 双通道图像（4个切块）；阳性包的一个随机切块在通道2上有亮斑"""
    rng = np.random.default_rng(seed)
    images, labels, ids = [], [], []
    for i in range(2 * n_per_class):
        image = rng.normal(size=(2, 16, 16))
        label = int(i % 2 == 0)
        if label:
            top, left = 8 * rng.integers(0, 2), 8 * rng.integers(0, 2)
            image[1, top + 2:top + 6, left + 2:left + 6] += signal
        images.append(image)
        labels.append(label)
        ids.append(f"bag{i:02d}")
    return BagDataset(ids, images, labels, GRID)


def _model(seed: int = 0, patch_size: int = 8) -> ScorerModel:
    return ScorerModel.initialize(ArchitectureSpec(in_channels=2, patch_size=patch_size, conv_channels=(4, 4)), seed=seed)


@pytest.mark.unit
class TestBagDataset:
    """包数据集"""

    def test_patch_count(self):
        dataset = _bags()
        assert dataset.n_patches == 4
        assert dataset.patches(0).shape == (4, 2, 8, 8)
        assert dataset.channels == 2

    def test_inconsistent_grid(self):
        with pytest.raises(ShapeMismatchError):
            BagDataset(["a", "b"], [np.zeros((1, 16, 16)), np.zeros((1, 24, 24))], [0, 1], GRID)

    def test_subset(self):
        subset = _bags().subset([1, 2])
        assert subset.sample_ids == ["bag01", "bag02"]
        assert subset.labels.tolist() == [0, 1]


@pytest.mark.unit
class TestMILLoss:
    """数据集级 MIL 损失"""

    def test_k_equal_n_is_patch_bce(self):
        dataset = _bags()
        model, cfg = _model(), LossConfig(w_plus=1.3, w_minus=0.7)
        expected = []
        for i in range(len(dataset)):
            mu = model.predict_proba(dataset.patches(i))
            expected.append(weighted_bce_terms(mu, np.full(mu.shape, dataset.labels[i]), cfg))
        assert mil_loss(model, dataset, "all", cfg) == pytest.approx(np.concatenate(expected).mean(), abs=1e-9)

    def test_inference_order_follows_dataset(self):
        dataset = _bags()
        sets = exhaustive_inference(_model(), dataset, 2, jobs=3)
        assert [s.sample_id for s in sets] == dataset.sample_ids
        assert all(s.grid_shape == (2, 2) for s in sets)


@pytest.mark.unit
class TestTraining:
    """训练循环"""

    def test_zero_epochs_returns_input(self, tmp_path):
        model = _model()
        result = train(_bags(), model, TrainConfig(k=2, epochs=0), LossConfig(), log_path=tmp_path / "log.csv")
        np.testing.assert_array_equal(result.model.theta, model.theta)
        assert result.model is not model
        assert list(pd.read_csv(tmp_path / "log.csv").columns) == LOG_COLUMNS

    def test_k_larger_than_grid(self):
        with pytest.raises(RankOutOfRangeError):
            train(_bags(), _model(), TrainConfig(k=5, epochs=1), LossConfig())

    def test_empty_training_set(self):
        with pytest.raises(EmptyInputError):
            train(BagDataset([], [], [], GRID), _model(), TrainConfig(epochs=1), LossConfig())

    def test_loss_decreases_on_separable_bags(self, tmp_path):
        cfg = TrainConfig(k=1, epochs=25, batch_size=4, learning_rate=0.02, patience=25, seed=1)
        dataset = _bags(n_per_class=6, seed=2)
        result = train(dataset, _model(seed=3), cfg, LossConfig(), val_set=dataset, log_path=tmp_path / "log.csv")
        history = pd.read_csv(tmp_path / "log.csv")
        assert len(history) >= 1
        assert history["train_loss"].min() < history["train_loss"].iloc[0]
        assert result.best_val_ap == pytest.approx(validation_ap(result.model, dataset, 1))

    def test_deterministic(self):
        cfg = TrainConfig(k=2, epochs=3, batch_size=3, learning_rate=0.01, seed=5)
        first = train(_bags(), _model(), cfg, LossConfig())
        second = train(_bags(), _model(), cfg, LossConfig(), jobs=2)
        np.testing.assert_array_equal(first.model.theta, second.model.theta)

    def test_early_stopping_restores_best(self):
        # 两个验证样本图像相同，AP 恒定，只能靠验证损失改善
        image = np.random.default_rng(9).normal(size=(2, 16, 16))
        val_set = BagDataset(["p", "n"], [image, image], [1, 0], GRID)
        cfg = TrainConfig(k=1, epochs=10, batch_size=4, learning_rate=0.01, patience=2)
        result = MILTrainer(cfg, LossConfig()).train(_model(), _bags(), val_set)
        history = result.history
        assert history["val_ap"].nunique() == 1
        best = int(history.loc[history["val_loss"].idxmin(), "epoch"])
        assert result.best_epoch == best
        assert mil_loss(result.model, val_set, 1, LossConfig()) == pytest.approx(history["val_loss"].min())
        if result.stopped_early:
            assert len(history) == best + cfg.patience

    def test_log_has_validation_loss(self, tmp_path):
        dataset = _bags()
        cfg = TrainConfig(k=1, epochs=2, batch_size=4, learning_rate=0.01)
        train(dataset, _model(), cfg, LossConfig(), val_set=dataset, log_path=tmp_path / "log.csv")
        history = pd.read_csv(tmp_path / "log.csv")
        assert list(history.columns) == LOG_COLUMNS
        assert history["val_loss"].notna().all()

    def test_whole_image_training(self):
        grid = GridConfig.whole_image(16)
        base = _bags()
        dataset = BagDataset(base.sample_ids, base.images, base.labels, grid)
        assert dataset.n_patches == 1
        result = train(dataset, _model(patch_size=16), TrainConfig(k=1, epochs=2, batch_size=4), LossConfig())
        assert len(result.history) == 2
        assert not np.array_equal(result.model.theta, _model(patch_size=16).theta)


@pytest.mark.unit
class TestBestEpochRule:
    """最佳 epoch 判定"""

    def test_higher_ap_wins(self):
        assert improves(0.9, 0.8, 0.8, 0.1)

    def test_lower_ap_loses_even_with_lower_loss(self):
        assert not improves(0.7, 0.01, 0.8, 0.5)

    def test_tied_ap_prefers_lower_loss(self):
        assert improves(1.0, 0.2, 1.0, 0.59)
        assert not improves(1.0, 0.6, 1.0, 0.59)

    def test_first_epoch_always_improves(self):
        assert improves(0.5, 0.7, float("-inf"), float("inf"))

    def test_perfect_ap_keeps_training_past_first_epoch(self, tmp_path):
        # 可分数据上 AP 很快达到 1.0，之后应按验证损失继续更新最佳参数
        dataset = _bags(n_per_class=6, seed=2, signal=6.0)
        cfg = TrainConfig(k=1, epochs=12, batch_size=4, learning_rate=0.02, patience=12, seed=1)
        result = train(dataset, _model(seed=3), cfg, LossConfig(), val_set=dataset, log_path=tmp_path / "log.csv")
        history = pd.read_csv(tmp_path / "log.csv")
        best_ap = history["val_ap"].max()
        tied = history[np.isclose(history["val_ap"], best_ap, rtol=0, atol=1e-12)]
        assert result.best_epoch == int(tied.loc[tied["val_loss"].idxmin(), "epoch"])
        assert result.best_val_ap == pytest.approx(best_ap)
