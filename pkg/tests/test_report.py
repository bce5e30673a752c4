"""Tests for report tables."""

import os
import shutil
import tempfile

import numpy as np
import pandas as pd
import pytest

from windcast.errors import DataError, FitError
from windcast.report import (BEST_MARK, accuracy_wide, best_methods, build_report, ci95,
                             extrapolation_ranges, forecast_series)


def accuracy_frame():
    return pd.DataFrame({
        'farm': ['wf1'] * 4 + ['wf2'] * 4,
        'season': ['winter'] * 8,
        'method': ['RR', 'SVR', 'ANN', 'GPR'] * 2,
        'rmse': [2.0, 3.0, 2.0, 4.0, 1.5, 1.6, 1.7, 1.8],
        'mae': [1.0, 2.0, 1.5, 3.0, 1.0, 1.2, 1.1, 1.3],
    })


@pytest.fixture
def exp_dir():
    """An experiment directory with every input the report reads."""
    path = tempfile.mkdtemp()
    accuracy_frame().to_csv(os.path.join(path, 'accuracy.csv'), index=False)
    pd.DataFrame({'pair': ['RR-SVR'], 't': [-2.5], 'p': [0.04], 'dof': [3],
                  'ci_low': [-1.2], 'ci_high': [-0.1]}).to_csv(os.path.join(path, 'ttests.csv'),
                                                               index=False)
    pd.DataFrame({'case': ['wf1/winter'] * 4, 'seed': [0] * 4, 'method': ['RR', 'SVR'] * 2,
                  'origin_timestamp': ['2019-01-05T00:00:00Z'] * 2 + ['2019-01-05T00:15:00Z'] * 2,
                  'y_real': [1.0, 1.0, 2.0, 2.0], 'y_hat': [1.1, 0.9, 2.2, 1.7]}).to_csv(
        os.path.join(path, 'forecasts.csv'), index=False)
    pd.DataFrame({'seed': [0] * 4, 'set': ['train', 'train', 'test', 'test'], 'index': [0, 1, 0, 1],
                  'y_real': [5.0, 30.0, 20.0, 48.0]}).to_csv(os.path.join(path, 'scenario.csv'),
                                                             index=False)
    yield path
    shutil.rmtree(path)


class TestCi95:
    """Tests for ci95."""

    def test_two_values(self):
        mean, low, high = ci95([0.0, 2.0])
        assert mean == 1.0
        assert low == pytest.approx(-11.7062, abs=1e-4)
        assert high == pytest.approx(13.7062, abs=1e-4)

    def test_constant(self):
        with pytest.raises(FitError):
            ci95([1.0, 1.0, 1.0])

    def test_single_value(self):
        with pytest.raises(FitError):
            ci95([1.0])


class TestTables:
    """Tests for the table builders."""

    def test_best_marks_all_ties(self):
        assert best_methods(pd.Series({'RR': 2.0, 'SVR': 3.0, 'ANN': 2.0})) == ['RR', 'ANN']

    def test_best_ignores_missing(self):
        assert best_methods(pd.Series({'RR': np.nan, 'SVR': 3.0})) == ['SVR']

    def test_accuracy_wide(self):
        wide = accuracy_wide(accuracy_frame())
        assert list(wide.columns) == ['farm', 'season', 'metric', 'RR', 'SVR', 'ANN', 'GPR', 'best']
        assert wide['metric'].tolist() == ['RMSE', 'MAE', 'RMSE', 'MAE']
        assert wide['best'].tolist() == ['RR;ANN', 'RR', 'RR', 'RR']

    def test_forecast_series(self):
        forecasts = pd.DataFrame({'case': ['c'] * 2, 'seed': [0, 0], 'method': ['RR', 'GPR'],
                                  'origin_timestamp': ['t0', 't0'], 'y_real': [3.0, 3.0],
                                  'y_hat': [2.5, 3.5]})
        series = forecast_series(forecasts)
        assert series['series'].tolist() == ['GPR', 'RR', 'real']
        assert series['power'].tolist() == [3.5, 2.5, 3.0]

    def test_extrapolation_ranges(self):
        scenario = pd.DataFrame({'seed': [0] * 3, 'set': ['train', 'train', 'test'],
                                 'index': [0, 1, 0], 'y_real': [1.0, 9.0, 40.0]})
        ranges = extrapolation_ranges(scenario)
        train = ranges[ranges['set'] == 'train'].iloc[0]
        assert (train['min'], train['max'], train['count']) == (1.0, 9.0, 2)


class TestBuildReport:
    """Tests for build_report."""

    def test_writes_every_output(self, exp_dir):
        bundle = build_report(exp_dir)
        expected = ['plots/extrapolation_ranges.csv', 'plots/forecast_vs_real.csv',
                    'tables/accuracy.csv', 'tables/accuracy.txt', 'tables/ci95.csv',
                    'tables/ttests.txt']
        assert sorted(list(bundle.text) + list(bundle.frames)) == expected
        for rel in expected:
            assert os.path.exists(os.path.join(exp_dir, rel))

    def test_best_marked_in_text(self, exp_dir):
        text = build_report(exp_dir).text['tables/accuracy.txt']
        assert f"2.0000{BEST_MARK}" in text
        assert f"3.0000{BEST_MARK}" not in text

    def test_rerun_is_byte_identical(self, exp_dir):
        out_a = os.path.join(exp_dir, 'a')
        out_b = os.path.join(exp_dir, 'b')
        build_report(exp_dir, out_a)
        build_report(exp_dir, out_b)
        for rel in ('tables/accuracy.txt', 'tables/accuracy.csv', 'tables/ci95.csv',
                    'plots/forecast_vs_real.csv'):
            with open(os.path.join(out_a, rel), 'rb') as a, open(os.path.join(out_b, rel), 'rb') as b:
                assert a.read() == b.read()

    def test_optional_inputs(self, exp_dir):
        for name in ('ttests.csv', 'forecasts.csv', 'scenario.csv'):
            os.remove(os.path.join(exp_dir, name))
        bundle = build_report(exp_dir)
        assert sorted(bundle.text) == ['tables/accuracy.txt']

    def test_missing_accuracy(self, exp_dir):
        os.remove(os.path.join(exp_dir, 'accuracy.csv'))
        with pytest.raises(DataError, match='not found'):
            build_report(exp_dir)

    def test_missing_column(self, exp_dir):
        accuracy_frame().drop(columns=['mae']).to_csv(os.path.join(exp_dir, 'accuracy.csv'),
                                                       index=False)
        with pytest.raises(DataError, match="missing column 'mae'"):
            build_report(exp_dir)

    def test_rmse_below_mae(self, exp_dir):
        frame = accuracy_frame()
        frame.loc[0, 'rmse'] = 0.5
        frame.to_csv(os.path.join(exp_dir, 'accuracy.csv'), index=False)
        with pytest.raises(DataError):
            build_report(exp_dir)
