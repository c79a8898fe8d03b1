"""
包级推断、学习率调度与 Adam 测试
"""
import numpy as np
import pytest

from shared.mil.bag_inference import (
    PatchScoreSet,
    bag_score,
    kth_greatest,
    predict_bag,
    resolve_k,
    sample_infection_probability,
    select_top_k,
)
from shared.mil.optimizer import AdamOptimizer, one_cycle_lr
from shared.utilities.errors import RankOutOfRangeError


@pytest.mark.unit
class TestTopK:
    """top-k 选择"""

    @pytest.mark.parametrize("values, r, expected", [
        ([0.9, 0.2, 0.7], 2, 0.7),
        ([0.5], 1, 0.5),
        ([0.4, 0.4, 0.1], 2, 0.4),
    ])
    def test_kth_greatest(self, values, r, expected):
        assert kth_greatest(values, r) == expected

    @pytest.mark.parametrize("r", [0, 4])
    def test_rank_out_of_range(self, r):
        with pytest.raises(RankOutOfRangeError):
            kth_greatest([0.1, 0.2, 0.3], r)

    def test_ties_prefer_lower_index(self):
        assert sorted(select_top_k([0.1, 0.9, 0.5, 0.9], 2).tolist()) == [1, 3]

    def test_k_equal_n_selects_all(self):
        assert sorted(select_top_k([0.3, 0.1, 0.2], 3).tolist()) == [0, 1, 2]

    def test_k_one_is_argmax(self):
        assert select_top_k([0.3, 0.8, 0.2], 1).tolist() == [1]

    def test_resolve_all(self):
        assert resolve_k("all", 49) == 49
        assert resolve_k(3, 49) == 3
        with pytest.raises(ValueError):
            resolve_k("most", 49)

    def test_scores_must_be_probabilities(self):
        with pytest.raises(ValueError):
            PatchScoreSet.build("s", [0.0, 0.5], k=1)

    def test_grid_shape_checked(self):
        with pytest.raises(ValueError):
            PatchScoreSet.build("s", [0.2, 0.5], k=1, grid_shape=(2, 2))


@pytest.mark.unit
class TestBagPrediction:
    """包标签与样本感染概率"""

    @pytest.mark.parametrize("scores, k, expected", [
        ([0.9, 0.8, 0.1], 2, 1),
        ([0.9, 0.4, 0.1], 2, 0),
        ([0.3, 0.4, 0.1], 1, 0),
    ])
    def test_predict_bag(self, scores, k, expected):
        assert predict_bag(PatchScoreSet.build("s", scores, k), eta=0.5) == expected

    def test_bag_score_is_kth(self):
        assert bag_score(PatchScoreSet.build("s", [0.9, 0.8, 0.1], 2)) == 0.8

    def test_even_median(self):
        assert sample_infection_probability(PatchScoreSet.build("s", [0.9, 0.7, 0.1], 2)) == pytest.approx(0.8)

    def test_odd_median(self):
        assert sample_infection_probability(PatchScoreSet.build("s", [0.9, 0.7, 0.2], 3)) == pytest.approx(0.7)

    def test_single(self):
        assert sample_infection_probability(PatchScoreSet.build("s", [0.3, 0.1], 1)) == pytest.approx(0.3)

    def test_z_within_top_k_range(self):
        scores = np.random.default_rng(0).uniform(0.01, 0.99, size=49)
        score_set = PatchScoreSet.build("s", scores, 5)
        top = scores[list(score_set.top_k)]
        z = sample_infection_probability(score_set)
        assert top.min() <= z <= top.max()
        assert bag_score(score_set) == top.min()


@pytest.mark.unit
class TestOptimizer:
    """one-cycle 调度与 Adam"""

    def test_schedule_endpoints(self):
        peak = 1e-3
        assert one_cycle_lr(0, 100, peak) == pytest.approx(peak / 25)
        assert one_cycle_lr(99, 100, peak) == pytest.approx(peak / 25)

    def test_schedule_peak_after_warmup(self):
        lrs = [one_cycle_lr(s, 101, 1e-3, warmup_fraction=0.3) for s in range(101)]
        assert int(np.argmax(lrs)) == 30
        assert max(lrs) == pytest.approx(1e-3)

    def test_single_step_schedule(self):
        assert one_cycle_lr(0, 1, 1.0, div_factor=10) == pytest.approx(0.1)

    def test_invalid_total(self):
        with pytest.raises(ValueError):
            one_cycle_lr(0, 0, 1e-3)

    def test_adam_first_step_magnitude(self):
        optimizer = AdamOptimizer(3)
        theta = optimizer.step(np.zeros(3), np.array([2.0, -0.5, 1e-3]), lr=0.1)
        np.testing.assert_allclose(theta, [-0.1, 0.1, -0.1], rtol=1e-4)

    def test_adam_does_not_mutate_input(self):
        theta = np.ones(2)
        AdamOptimizer(2).step(theta, np.ones(2), lr=0.5)
        np.testing.assert_array_equal(theta, np.ones(2))
