"""
AP 与定位 AUC 测试
"""
import numpy as np
import pytest

from shared.mil.bag_inference import PatchScoreSet
from shared.mil.metrics import evaluate_ap, localization_auc
from shared.utilities.errors import DegenerateLabelsError, ShapeMismatchError


def _brute_force_ap(scores, labels):
    """逐个阈值的阶梯插值 AP"""
    scores, labels = np.asarray(scores), np.asarray(labels)
    ap, previous_recall = 0.0, 0.0
    for threshold in sorted(set(scores.tolist()), reverse=True):
        predicted = scores >= threshold
        tp = int((predicted & (labels == 1)).sum())
        recall = tp / int(labels.sum())
        precision = tp / int(predicted.sum())
        ap += (recall - previous_recall) * precision
        previous_recall = recall
    return ap


@pytest.mark.unit
class TestAveragePrecision:
    """包级 AP"""

    def test_perfect_ranking(self):
        result = evaluate_ap([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert result.average_precision == pytest.approx(1.0)
        assert result.positive_fraction == 0.5

    def test_reversed_ranking(self):
        scores, labels = [0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]
        assert evaluate_ap(scores, labels).average_precision == pytest.approx(_brute_force_ap(scores, labels))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        scores = rng.random(40)
        labels = (rng.random(40) < 0.4).astype(int)
        assert evaluate_ap(scores, labels).average_precision == pytest.approx(_brute_force_ap(scores, labels))

    def test_all_positive(self):
        with pytest.raises(DegenerateLabelsError):
            evaluate_ap([0.1, 0.9], [1, 1])

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            evaluate_ap([0.1, 0.9], [1, 0, 1])

    def test_curve_table_columns(self):
        table = evaluate_ap([0.9, 0.8, 0.2], [1, 0, 0]).curve_table()
        assert list(table.columns) == ["threshold", "precision", "recall"]


@pytest.mark.unit
class TestLocalizationAUC:
    """实例级定位 AUC"""

    def test_perfect_localization(self):
        sets = [PatchScoreSet.build("a", [0.9, 0.1, 0.2, 0.8], 2), PatchScoreSet.build("b", [0.3, 0.2, 0.1, 0.05], 2)]
        labels = {"a": [1, 0, 0, 1], "b": [0, 0, 0, 0]}
        assert localization_auc(sets, labels) == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            localization_auc([PatchScoreSet.build("a", [0.9, 0.1], 1)], {"a": [1, 0, 0]})

    def test_no_positive_patches(self):
        with pytest.raises(DegenerateLabelsError):
            localization_auc([PatchScoreSet.build("a", [0.9, 0.1], 1)], {"a": [0, 0]})
