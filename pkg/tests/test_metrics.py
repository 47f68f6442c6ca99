from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, strategies as st

from nexus.errors import EmptyInput, LengthMismatch, NearZeroActual, NonPositiveBaseline
from nexus.metrics import (
    CellStats,
    MetricReport,
    SampleKey,
    aggregate,
    format_improvement,
    mape,
    relative_improvement,
    rmse,
)


def brute_mape(actual, predicted):
    total = 0.0
    for a, p in zip(actual, predicted):
        total += abs(a - p) / abs(a)
    return total / len(actual)


def brute_rmse(actual, predicted):
    total = 0.0
    for a, p in zip(actual, predicted):
        total += (a - p) ** 2
    return (total / len(actual)) ** 0.5


class TestMape:
    def test_perfect_forecast(self):
        assert mape([100, 200], [100, 200]) == 0.0

    def test_hand_arithmetic(self):
        assert mape([100, 200], [110, 180]) == pytest.approx(0.10, abs=1e-12)

    def test_single_pair(self):
        assert mape([50], [0]) == pytest.approx(1.0, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            mape([1, 2], [1])
        with pytest.raises(LengthMismatch):
            mape([], [])

    def test_near_zero_actual(self):
        with pytest.raises(NearZeroActual):
            mape([1e-10], [1.0])


class TestRmse:
    def test_perfect(self):
        assert rmse([3, 7, 9], [3, 7, 9]) == 0.0

    def test_hand_arithmetic(self):
        assert rmse([1, 2, 3], [2, 2, 2]) == pytest.approx(math.sqrt(2 / 3), abs=1e-9)

    def test_single_residual(self):
        assert rmse([0], [5]) == 5.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            rmse([1], [1, 2])


def test_brute_force_oracle_equivalence():
    rng = random.Random(42)
    for _ in range(300):
        n = rng.randint(1, 40)
        actual = [rng.uniform(1, 1000) * rng.choice([-1, 1]) for _ in range(n)]
        predicted = [a + rng.uniform(-50, 50) for a in actual]
        assert mape(actual, predicted) == pytest.approx(brute_mape(actual, predicted), abs=1e-12)
        assert rmse(actual, predicted) == pytest.approx(brute_rmse(actual, predicted), abs=1e-12)


finite = st.floats(min_value=1.0, max_value=1e6, allow_nan=False)


@given(
    st.lists(st.tuples(finite, finite), min_size=1, max_size=30),
    st.floats(min_value=0.01, max_value=100.0),
    st.booleans(),
)
def test_scale_invariance(pairs, c, negate):
    if negate:
        c = -c
    actual = [a for a, _ in pairs]
    predicted = [p for _, p in pairs]
    scaled_a = [c * a for a in actual]
    scaled_p = [c * p for p in predicted]
    assert mape(scaled_a, scaled_p) == pytest.approx(mape(actual, predicted), rel=1e-9)
    assert rmse(scaled_a, scaled_p) == pytest.approx(abs(c) * rmse(actual, predicted), rel=1e-9)


@given(st.lists(st.tuples(finite, finite), min_size=2, max_size=30), st.randoms())
def test_permutation_invariance(pairs, rng):
    actual = [a for a, _ in pairs]
    predicted = [p for _, p in pairs]
    shuffled = list(pairs)
    rng.shuffle(shuffled)
    s_actual = [a for a, _ in shuffled]
    s_predicted = [p for _, p in shuffled]
    assert mape(s_actual, s_predicted) == pytest.approx(mape(actual, predicted), rel=1e-12)
    assert rmse(s_actual, s_predicted) == pytest.approx(rmse(actual, predicted), rel=1e-12)


class TestRelativeImprovement:
    def test_table_values(self):
        assert format_improvement(relative_improvement(0.0423, 0.0361)) == "↓14.7%"
        assert format_improvement(relative_improvement(63.1264, 53.4620)) == "↓15.3%"

    def test_identity(self):
        assert relative_improvement(0.5, 0.5) == 0.0

    def test_zero_treatment(self):
        assert relative_improvement(0.7, 0.0) == 1.0

    def test_regression_is_negative(self):
        assert relative_improvement(0.1, 0.2) < 0
        assert format_improvement(relative_improvement(0.1, 0.2)).startswith("↑")

    def test_nonpositive_baseline(self):
        with pytest.raises(NonPositiveBaseline):
            relative_improvement(0.0, 0.1)


def _key(method, horizon=4):
    return SampleKey("ds", "multimodal", horizon, method)


class TestAggregate:
    def test_perfect_single_task(self):
        report = aggregate([(_key("m"), [10.0, 20.0], [10.0, 20.0])])
        cell = report.get("ds", "multimodal", 4, "m")
        assert cell.mape == 0.0 and cell.rmse == 0.0 and cell.sample_count == 1

    def test_pooled_two_tasks(self):
        # per-task MAPEs 0.02 and 0.04 with equal lengths pool to 0.03
        rows = [
            (_key("m"), [100.0, 100.0], [102.0, 102.0]),
            (_key("m"), [100.0, 100.0], [104.0, 104.0]),
        ]
        cell = aggregate(rows).get("ds", "multimodal", 4, "m")
        assert cell.mape == pytest.approx(0.03, abs=1e-12)
        assert cell.sample_count == 2

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            aggregate([])

    def test_average_row_weighted_by_sample_count(self):
        # independent weighted-mean oracle
        mapes = {4: 0.0306, 8: 0.0369, 13: 0.0407}
        counts = {4: 510, 8: 450, 13: 375}
        cells = {
            SampleKey("ds", "multimodal", h, "m"): CellStats(mapes[h], 1.0, counts[h])
            for h in mapes
        }
        expected = sum(mapes[h] * counts[h] for h in mapes) / sum(counts.values())
        avg = MetricReport(cells).average("ds", "multimodal", "m")
        assert avg.mape == pytest.approx(expected, abs=1e-12)
        assert f"{avg.mape:.4f}" == "0.0356"
        assert avg.sample_count == 1335

    def test_markdown_has_improvement_subscript(self):
        cells = {
            SampleKey("ds", "multimodal", 4, "cot"): CellStats(0.0423, 63.1264, 10),
            SampleKey("ds", "multimodal", 4, "nexus"): CellStats(0.0361, 53.4620, 10),
        }
        md = MetricReport(cells).to_markdown(baseline_method="cot")
        assert "↓14.7%" in md and "↓15.3%" in md

    def test_json_round_trip_structure(self):
        import json

        cells = {SampleKey("ds", "numerical_only", 8, "m"): CellStats(0.05, 2.0, 3)}
        payload = json.loads(MetricReport(cells).to_json())
        assert payload["ds"]["numerical_only"]["8"]["m"]["mape"] == 0.05
        assert payload["ds"]["numerical_only"]["average"]["m"]["sample_count"] == 3
