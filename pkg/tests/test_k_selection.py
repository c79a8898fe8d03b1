"""
k 值选择与检查点测试
"""
import numpy as np
import pytest

from shared.analysis_tools.k_selection import (
    REPORT_COLUMNS,
    KCandidate,
    candidate_k_report,
    candidate_ks,
    select_k,
)
from shared.data_access.checkpoint_store import Checkpoint, load_checkpoint, save_checkpoint
from shared.data_processors.image_processor import ChannelStats, GridConfig
from shared.mil.scorer import ArchitectureSpec, ScorerModel
from shared.mil.trainer import BagDataset
from shared.utilities.errors import CheckpointMismatchError, EmptyInputError, ScreenIOError

TARGET = 1 - np.exp(-0.4)


@pytest.mark.unit
class TestSelectK:
    """按理论感染比例选 k"""

    def test_target_fraction(self):
        report = select_k([KCandidate(k=2, mean_fraction=0.3, ap=0.9)], moi=0.4)
        assert report.target_fraction == pytest.approx(0.3297, abs=1e-4)

    def test_single_candidate(self):
        assert select_k([KCandidate(k=5, mean_fraction=0.9, ap=0.5)], moi=0.4).flagged_k == 5

    def test_nearest_wins(self):
        candidates = [KCandidate(k=1, mean_fraction=0.05, ap=0.99), KCandidate(k=3, mean_fraction=0.33, ap=0.9)]
        assert select_k(candidates, moi=0.4, tie_tolerance=0.0).flagged_k == 3

    def test_equal_distance_prefers_ap(self):
        candidates = [
            KCandidate(k=2, mean_fraction=TARGET - 0.02, ap=0.97),
            KCandidate(k=5, mean_fraction=TARGET + 0.02, ap=0.99),
        ]
        assert select_k(candidates, moi=0.4).flagged_k == 5

    def test_full_tie_prefers_smaller_k(self):
        candidates = [KCandidate(k=k, mean_fraction=TARGET, ap=0.9) for k in (10, 3)]
        assert select_k(candidates, moi=0.4).flagged_k == 3

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            select_k([], moi=0.4)

    def test_candidates_clipped(self):
        assert candidate_ks(9) == [1, 2, 3, 5]
        assert candidate_ks(49, (49, 2, 2, 100)) == [2, 49]

    def test_report_table(self):
        report = select_k([KCandidate(k=k, mean_fraction=0.1 * k, ap=0.9) for k in (3, 1, 2)], moi=0.4, tie_tolerance=0.0)
        table = report.table()
        assert list(table.columns) == REPORT_COLUMNS
        assert table["k"].tolist() == [1, 2, 3]
        assert table["flagged"].tolist() == [False, False, True]


@pytest.mark.integration
def test_candidate_report_runs_on_models():
    """候选模型在验证集上的比例与 AP"""
    rng = np.random.default_rng(0)
    grid = GridConfig(patch_size=8, stride=4)
    val_set = BagDataset(["p", "n"], [rng.normal(size=(1, 16, 16)) for _ in range(2)], [1, 0], grid)
    arch = ArchitectureSpec(in_channels=1, patch_size=8, conv_channels=(2,))
    models = {k: ScorerModel.initialize(arch, seed=k) for k in (1, 3)}
    report = candidate_k_report(models, val_set, moi=0.4, sigma=1.0)
    assert {c.k for c in report.candidates} == {1, 3}
    assert all(0.0 <= c.mean_fraction <= 1.0 for c in report.candidates)
    assert report.flagged_k in (1, 3)


@pytest.mark.unit
class TestCheckpoint:
    """检查点读写"""

    def _checkpoint(self, channels: int = 2) -> Checkpoint:
        model = ScorerModel.initialize(ArchitectureSpec(in_channels=channels, patch_size=8, conv_channels=(2,)), seed=4)
        stats = ChannelStats(mean=(0.1,) * channels, std=(0.2,) * channels)
        return Checkpoint(model=model, stats=stats, grid=GridConfig(patch_size=8, stride=4), k=2,
                          config_hash="abc", extra={"best_epoch": 3})

    def test_round_trip(self, tmp_path):
        original = self._checkpoint()
        loaded = load_checkpoint(save_checkpoint(tmp_path / "ckpt.json", original), expected_channels=2)
        np.testing.assert_array_equal(loaded.model.theta, original.model.theta)
        assert loaded.stats == original.stats
        assert loaded.grid == original.grid
        assert (loaded.k, loaded.config_hash, loaded.extra) == (2, "abc", {"best_epoch": 3})

    def test_channel_mismatch(self, tmp_path):
        path = save_checkpoint(tmp_path / "ckpt.json", self._checkpoint(channels=3))
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(path, expected_channels=5)

    def test_missing(self, tmp_path):
        with pytest.raises(ScreenIOError):
            load_checkpoint(tmp_path / "none.json")
