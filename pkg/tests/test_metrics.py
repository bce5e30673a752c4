"""Tests for accuracy metrics, t-tests and persistence."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from windcast.errors import DataError, FitError
from windcast.metrics import (AccuracyTable, abs_diff_stats, mae, paired_ttest, persistence_forecast,
                              rmse)

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestErrors:
    """Tests for rmse, mae and abs_diff_stats."""

    def test_hand_example(self):
        assert rmse([1, 2, 3], [1, 2, 5]) == pytest.approx(np.sqrt(4 / 3))
        assert mae([1, 2, 3], [1, 2, 5]) == pytest.approx(2 / 3)

    def test_documented_examples(self):
        assert rmse([1, 2, 3], [1, 2, 4]) == pytest.approx(0.5773503, abs=1e-7)
        assert rmse([0, 0], [3, 4]) == pytest.approx(3.5355339, abs=1e-7)
        assert mae([1, 2, 3], [1, 2, 4]) == pytest.approx(0.3333333, abs=1e-7)
        assert mae([0, 0], [3, 4]) == pytest.approx(3.5)
        assert abs_diff_stats([0.0, 0.0], [1.0, 3.0]) == pytest.approx((2.0, 2.0))

    def test_perfect_forecast(self):
        assert rmse([4.0, 5.0], [4.0, 5.0]) == 0.0
        assert mae([4.0, 5.0], [4.0, 5.0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            rmse([1.0, 2.0], [1.0])

    def test_empty(self):
        with pytest.raises(DataError):
            mae([], [])

    def test_abs_diff_stats(self):
        mean, var = abs_diff_stats([0.0, 0.0, 0.0], [1.0, -2.0, 3.0])
        assert mean == pytest.approx(2.0)
        assert var == pytest.approx(1.0)

    def test_abs_diff_needs_two_points(self):
        with pytest.raises(DataError):
            abs_diff_stats([1.0], [2.0])

    @given(st.lists(st.tuples(finite, finite), min_size=1, max_size=50))
    def test_rmse_at_least_mae(self, pairs):
        y, yhat = zip(*pairs)
        assert rmse(y, yhat) >= mae(y, yhat) - 1e-9


class TestPairedTTest:
    """Tests for paired_ttest."""

    def test_hand_example(self):
        result = paired_ttest([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
        assert result.t_stat == pytest.approx(3.4641, abs=1e-4)
        assert result.p_value == pytest.approx(0.0742, abs=1e-4)
        assert result.dof == 2
        assert result.mean_diff == pytest.approx(2.0)
        assert result.ci_low < 2.0 < result.ci_high

    def test_matches_scipy_ttest_rel(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            n = int(rng.integers(3, 30))
            a = rng.normal(5.0, 2.0, n)
            b = a + rng.normal(0.3, 1.0, n)
            ours = paired_ttest(a, b)
            reference = stats.ttest_rel(a, b)
            assert ours.t_stat == pytest.approx(reference.statistic, rel=1e-9)
            assert ours.p_value == pytest.approx(reference.pvalue, abs=1e-3)

    def test_huge_t_keeps_positive_p(self):
        a = 1e6 + np.random.default_rng(0).normal(0.0, 1e-3, 51)
        result = paired_ttest(a, np.zeros_like(a))
        assert result.t_stat > 1e9
        assert 0.0 < result.p_value <= 1.0

    def test_sign_flips(self):
        a, b = [3.0, 1.0, 4.0, 1.0], [2.0, 0.5, 1.0, 0.0]
        assert paired_ttest(a, b).t_stat == pytest.approx(-paired_ttest(b, a).t_stat)

    def test_constant_differences(self):
        with pytest.raises(FitError):
            paired_ttest([2.0, 3.0, 4.0], [1.0, 2.0, 3.0])

    def test_too_few_pairs(self):
        with pytest.raises(DataError):
            paired_ttest([1.0], [0.0])


class TestPersistence:
    """Tests for persistence_forecast."""

    def test_uses_value_at_origin(self):
        power = np.arange(20.0)
        assert persistence_forecast(power, [3, 10], 8).tolist() == [3.0, 10.0]

    def test_step_series_shift(self):
        h = 8
        power = np.where(np.arange(60) >= 30, 10.0, 0.0)
        origins = np.arange(0, 60 - h)
        forecast = persistence_forecast(power, origins, h)
        assert np.array_equal(forecast, power[origins])
        assert forecast[29] == 0.0
        assert power[29 + h] == 10.0
        assert forecast[30] == 10.0

    def test_origin_out_of_range(self):
        with pytest.raises(DataError):
            persistence_forecast(np.arange(5.0), [5], 1)

    def test_horizon_positive(self):
        with pytest.raises(DataError):
            persistence_forecast(np.arange(5.0), [1], 0)


class TestAccuracyTable:
    """Tests for AccuracyTable."""

    def test_methods_and_cases_keep_order(self):
        table = AccuracyTable()
        table.add('WF1', 'spring', 'SISO', [1.0, 2.0], [1.0, 3.0])
        table.add('WF1', 'spring', 'MIMO', [1.0, 2.0], [1.0, 2.0])
        table.add('WF2', 'summer', 'SISO', [1.0, 2.0], [2.0, 3.0])
        assert table.methods() == ['SISO', 'MIMO']
        assert table.cases() == [('WF1', 'spring'), ('WF2', 'summer')]
        assert table.values('SISO', 'mae') == [0.5, 1.0]
        assert len(table) == 3

    def test_to_frame(self):
        table = AccuracyTable()
        table.add('WF1', 'winter', 'RR', [0.0, 0.0], [3.0, 4.0])
        frame = table.to_frame()
        assert list(frame.columns) == list(AccuracyTable.COLUMNS)
        assert frame.loc[0, 'rmse'] == pytest.approx(np.sqrt(12.5))
        assert frame.loc[0, 'mae'] == pytest.approx(3.5)
