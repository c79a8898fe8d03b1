"""
药效评分与剂量-效应拟合测试
"""
from math import comb

import numpy as np
import pandas as pd
import pytest

from shared.analysis_tools.dose_response import fit_logistic, logistic
from shared.analysis_tools.efficacy_analysis import (
    DOSE_COLUMNS,
    TREATMENT_COLUMNS,
    TreatmentScore,
    build_dose_group,
    doses_table,
    dose_efficacy,
    hit_recovery,
    rank_treatments,
    score_screen,
    sign_coverage,
    sign_test_median_ci,
    treatment_efficacy,
    treatment_recurrence,
    treatments_table,
)
from shared.utilities.errors import DegenerateDataError, EmptyInputError


def _enumerated_coverage(n: int, d: int) -> float:
    """精确枚举 P(d <= #{x_i < 中位数} <= n-d)"""
    return sum(comb(n, j) for j in range(d, n - d + 1)) / 2 ** n


@pytest.mark.unit
class TestSignTest:
    """中位数符号检验置信区间"""

    @pytest.mark.parametrize("level", [0.9, 0.95, 0.99])
    @pytest.mark.parametrize("n", range(1, 31))
    def test_against_enumeration(self, n, level):
        values = np.arange(n, dtype=float) / max(n, 1)
        interval = sign_test_median_ci(values, level)
        valid = [d for d in range(1, (n + 1) // 2 + 1) if _enumerated_coverage(n, d) >= level]
        if valid:
            d = max(valid)
            assert not interval.insufficient
            assert interval.d == d
            assert interval.coverage == pytest.approx(_enumerated_coverage(n, d), abs=1e-12)
            assert interval.lower == values[d - 1]
            assert interval.upper == values[n - d]
        else:
            assert interval.insufficient
            assert (interval.lower, interval.upper) == (values[0], values[-1])

    def test_six_replicates(self):
        interval = sign_test_median_ci([0.6, 0.1, 0.3, 0.2, 0.9, 0.4], 0.95)
        assert interval.d == 1
        assert interval.coverage == pytest.approx(0.96875)
        assert (interval.lower, interval.upper) == (0.1, 0.9)

    def test_single_value(self):
        interval = sign_test_median_ci([0.3], 0.95)
        assert interval.insufficient
        assert (interval.lower, interval.upper) == (0.3, 0.3)
        assert interval.coverage == pytest.approx(0.0)

    def test_coverage_formula(self):
        assert sign_coverage(6, 1) == pytest.approx(1 - 2 / 64)

    def test_level_range(self):
        with pytest.raises(ValueError):
            sign_test_median_ci([0.1, 0.2], 1.0)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            sign_test_median_ci([], 0.95)


@pytest.mark.unit
class TestDoseEfficacy:
    """剂量分数"""

    def test_uninfected_like(self):
        assert dose_efficacy([0.0] * 6) == 1.0

    def test_infected_like(self):
        assert dose_efficacy([1.0] * 6) == 0.0

    def test_reference_replicates(self):
        assert dose_efficacy([0.1, 0.2, 0.2, 0.3, 0.4, 0.9], 0.95) == pytest.approx(0.1)

    def test_group_row(self):
        group = build_dose_group("drug", 10.0, [0.1, 0.2, 0.2, 0.3, 0.4, 0.9])
        row = group.to_row(zeta=0.05)
        assert row["beta"] == pytest.approx(0.25)
        assert row["flag"] == "ok"
        assert row["dose_effective"] is True

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            build_dose_group("drug", 1.0, [0.2, 1.2])


@pytest.mark.unit
class TestTreatmentRanking:
    """药物聚合与排名"""

    def test_effective_branch(self):
        score = treatment_efficacy({1.0: 0.2, 10.0: 0.6, 100.0: 0.7}, zeta=0.5)
        assert score.e_t == pytest.approx(0.65)
        assert score.effective

    def test_else_branch(self):
        score = treatment_efficacy({1.0: 0.1, 10.0: 0.2, 100.0: 0.3}, zeta=0.5)
        assert score.e_t == pytest.approx(0.2)
        assert not score.effective

    def test_single_dose(self):
        score = treatment_efficacy({1.0: 0.6}, zeta=0.5)
        assert score.e_t == 0.6
        assert score.effective

    def test_order_and_effective_set(self):
        scores = [TreatmentScore(treatment=n, e_t=e, effective=e >= 0.5) for n, e in (("A", 0.9), ("B", 0.4), ("C", 0.7))]
        ranked = rank_treatments(scores)
        assert [s.treatment for s in ranked.ordered] == ["A", "C", "B"]
        assert ranked.effective_set == ["A", "C"]

    def test_tie_broken_by_name(self):
        scores = [TreatmentScore(treatment=n, e_t=0.6, effective=True) for n in ("B", "A")]
        assert [s.treatment for s in rank_treatments(scores).ordered] == ["A", "B"]

    def test_empty(self):
        ranked = rank_treatments([])
        assert ranked.ordered == [] and ranked.effective_set == []

    def test_score_screen_tables(self):
        rows = []
        for name, z in (("good", 0.05), ("bad", 0.8)):
            for dose in (1.0, 10.0):
                rows += [{"sample_id": f"{name}_{dose}_{r}", "treatment": name, "concentration": dose, "z": z + 0.01 * r}
                         for r in range(6)]
        groups, ranked = score_screen(pd.DataFrame(rows), level=0.95, zeta=0.5)
        assert ranked.effective_set == ["good"]
        assert list(doses_table(groups, 0.5).columns) == DOSE_COLUMNS
        table = treatments_table(ranked)
        assert list(table.columns) == TREATMENT_COLUMNS
        assert table["rank"].tolist() == [1, 2]

    def test_score_screen_empty(self):
        groups, ranked = score_screen(pd.DataFrame(columns=["sample_id", "treatment", "concentration", "z"]))
        assert groups == [] and ranked.effective_set == []

    def test_recurrence(self):
        table = treatment_recurrence({1: ["A", "B"], 2: ["A"], 3: []}, treatments=["C"])
        assert table["treatment"].tolist() == ["A", "B", "C"]
        assert table["n_models"].tolist() == [2, 1, 0]
        assert table["fraction"].tolist() == pytest.approx([2 / 3, 1 / 3, 0.0])

    def test_hit_recovery(self):
        assert hit_recovery(["A", "B"], ["A", "C"]) == {"precision": 0.5, "recall": 0.5}
        assert hit_recovery([], []) == {"precision": 1.0, "recall": 1.0}


@pytest.mark.unit
class TestDoseResponse:
    """逻辑曲线拟合"""

    def test_recovers_generating_parameters(self):
        x = np.linspace(-1.0, 2.0, 6)
        fit = fit_logistic(x, logistic(x, 0.5, 2.0))
        assert fit.midpoint == pytest.approx(0.5, abs=1e-4)
        assert fit.slope == pytest.approx(2.0, abs=1e-4)
        assert fit.rmse < 1e-6

    def test_constant_scores(self):
        with pytest.raises(DegenerateDataError):
            fit_logistic([0.0, 1.0, 2.0], [0.5, 0.5, 0.5])

    def test_two_doses(self):
        with pytest.raises(DegenerateDataError):
            fit_logistic([0.0, 1.0, 0.0, 1.0], [0.1, 0.9, 0.2, 0.8])


@pytest.mark.unit
class TestEfficacyProperties:
    """随机重复孔上的区间与分数性质"""

    LEVELS = (0.8, 0.9, 0.95, 0.99)

    def _samples(self, count: int = 300):
        rng = np.random.default_rng(11)
        for _ in range(count):
            yield rng, rng.uniform(0.0, 1.0, size=int(rng.integers(1, 31)))

    def test_endpoints_are_observations(self):
        for _, values in self._samples():
            for level in self.LEVELS:
                interval = sign_test_median_ci(values, level)
                assert interval.lower in values
                assert interval.upper in values
                assert interval.lower <= interval.upper

    def test_higher_level_interval_contains_lower(self):
        for _, values in self._samples():
            intervals = [sign_test_median_ci(values, level) for level in self.LEVELS]
            for narrow, wide in zip(intervals, intervals[1:]):
                assert wide.lower <= narrow.lower
                assert wide.upper >= narrow.upper

    def test_dose_score_non_increasing_in_level(self):
        for _, values in self._samples():
            scores = [dose_efficacy(values, level) for level in self.LEVELS]
            assert all(a >= b for a, b in zip(scores, scores[1:]))

    def test_adding_effective_dose_keeps_treatment_effective(self):
        for rng, _ in self._samples():
            zeta = float(rng.uniform(0.1, 0.9))
            portfolio = {
                name: {float(10.0 ** i): float(rng.uniform(0.0, 1.0)) for i in range(int(rng.integers(1, 6)))}
                for name in ("A", "B", "C")
            }
            before = rank_treatments([treatment_efficacy(d, zeta=zeta, treatment=n) for n, d in portfolio.items()])
            portfolio["A"] = {**portfolio["A"], 1e6: float(rng.uniform(zeta, 1.0))}
            after = rank_treatments([treatment_efficacy(d, zeta=zeta, treatment=n) for n, d in portfolio.items()])
            assert "A" in after.effective_set
            assert set(before.effective_set) <= set(after.effective_set)
