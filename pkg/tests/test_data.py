"""Tests for series handling, normalization, windows and the generator."""

import os
import shutil
import tempfile

import numpy as np
import pandas as pd
import pytest

from windcast.data import (CSV_HEADER, FARM_PROFILES, TurbineCurve, WindSeries, apply_norm,
                           build_windows, day_span, denorm_power, fit_norm, ingest_csv, pearson,
                           power_curve, synth_farm, synth_windfarm, write_csv)
from windcast.errors import DataError


def make_series(n, capacity=10.0, start='2020-01-01 00:00'):
    """A series whose every channel encodes the row index."""
    idx = np.arange(n, dtype=np.float64)
    timestamps = pd.date_range(pd.Timestamp(start, tz='UTC'), periods=n, freq='15min')
    return WindSeries('test', timestamps, capacity * idx / max(n - 1, 1), idx,
                      np.column_stack([idx + k for k in range(5)]), capacity)


@pytest.fixture
def temp_dir():
    """Create a temporary directory."""
    path = tempfile.mkdtemp()
    yield path
    shutil.rmtree(path)


@pytest.fixture
def csv_file(temp_dir):
    """A well-formed 3-row farm CSV."""
    path = os.path.join(temp_dir, 'farm.csv')
    write_csv(make_series(3), path)
    return path


class TestPowerCurve:
    """Tests for power_curve."""

    def test_below_cut_in(self):
        assert power_curve(FARM_PROFILES[2].curve, 2.0) == 0.0

    def test_at_rated(self):
        curve = FARM_PROFILES[2].curve
        assert power_curve(curve, curve.rated) == curve.capacity

    def test_above_cut_out(self):
        assert power_curve(FARM_PROFILES[0].curve, 26.0) == 0.0

    def test_cubic_ramp(self):
        curve = TurbineCurve(3.0, 11.0, 21.0, 48.0)
        expected = 48.0 * (7.0 ** 3 - 27.0) / (11.0 ** 3 - 27.0)
        assert power_curve(curve, 7.0) == pytest.approx(expected)

    def test_negative_speed(self):
        with pytest.raises(DataError):
            power_curve(FARM_PROFILES[2].curve, np.array([1.0, -0.5]))

    def test_invalid_curve(self):
        with pytest.raises(DataError):
            TurbineCurve(5.0, 4.0, 25.0, 48.0)


class TestCsv:
    """Tests for ingest_csv and write_csv."""

    def test_ingest_well_formed(self, csv_file):
        series = ingest_csv(csv_file, capacity=10.0)
        assert len(series) == 3
        assert series.farm_id == 'farm'

    def test_round_trip_is_byte_identical(self, csv_file, temp_dir):
        again = os.path.join(temp_dir, 'again.csv')
        write_csv(ingest_csv(csv_file, capacity=10.0), again)
        with open(csv_file, 'rb') as a, open(again, 'rb') as b:
            assert a.read() == b.read()

    def test_header(self, csv_file):
        with open(csv_file) as f:
            assert f.readline().strip() == ','.join(CSV_HEADER)

    def test_duplicate_timestamp_names_row_2(self, csv_file):
        lines = open(csv_file).read().splitlines()
        second = lines[1].split(',')
        lines[2] = ','.join([second[0]] + lines[2].split(',')[1:])
        with open(csv_file, 'w') as f:
            f.write('\n'.join(lines) + '\n')
        with pytest.raises(DataError, match='row 2'):
            ingest_csv(csv_file, capacity=10.0)

    def test_power_above_capacity(self, csv_file):
        with pytest.raises(DataError):
            ingest_csv(csv_file, capacity=4.0)

    def test_missing_column(self, temp_dir):
        path = os.path.join(temp_dir, 'bad.csv')
        with open(path, 'w') as f:
            f.write('timestamp,power_mw\n2020-01-01T00:00:00Z,1.0\n')
        with pytest.raises(DataError, match='missing column'):
            ingest_csv(path, capacity=10.0)

    def test_unparseable_number(self, csv_file):
        lines = open(csv_file).read().splitlines()
        fields = lines[3].split(',')
        fields[2] = 'abc'
        lines[3] = ','.join(fields)
        with open(csv_file, 'w') as f:
            f.write('\n'.join(lines) + '\n')
        with pytest.raises(DataError, match='row 3'):
            ingest_csv(csv_file, capacity=10.0)

    def test_missing_file(self, temp_dir):
        with pytest.raises(FileNotFoundError):
            ingest_csv(os.path.join(temp_dir, 'nope.csv'), capacity=10.0)


class TestSeries:
    """Tests for WindSeries validation."""

    def test_gap_rejected(self):
        series = make_series(4)
        stamps = series.timestamps.delete(2)
        with pytest.raises(DataError, match='row 3'):
            WindSeries('gap', stamps, series.power[:3], series.speed[:3], series.nwp[:3], 10.0)

    def test_negative_speed_rejected(self):
        series = make_series(3)
        with pytest.raises(DataError):
            WindSeries('neg', series.timestamps, series.power, [1.0, -1.0, 1.0], series.nwp, 10.0)

    def test_slice(self):
        part = make_series(10).slice(2, 5)
        assert len(part) == 3
        assert part.speed.tolist() == [2.0, 3.0, 4.0]


class TestGenerator:
    """Tests for the synthetic wind farm generator."""

    def test_deterministic(self):
        a = synth_windfarm(seed=3, days=5)
        b = synth_windfarm(seed=3, days=5)
        assert np.array_equal(a.channels(), b.channels())
        assert a.timestamps.equals(b.timestamps)

    def test_seed_changes_output(self):
        assert not np.array_equal(synth_windfarm(1, 2).speed, synth_windfarm(2, 2).speed)

    def test_noise_free_nwp_speed_equals_speed(self):
        series = synth_windfarm(seed=0, days=3, nwp_bias=0.0, nwp_noise=0.0)
        assert np.array_equal(series.nwp[:, 0], series.speed)

    def test_power_within_capacity(self):
        series = synth_windfarm(seed=4, days=20)
        assert series.power.min() >= 0.0
        assert series.power.max() <= series.capacity

    def test_length(self):
        assert len(synth_windfarm(seed=0, days=2)) == 192

    def test_power_speed_correlation(self):
        series = synth_windfarm(seed=0, days=365)
        assert pearson(series.power, series.speed) >= 0.9

    def test_farm_profiles(self):
        for profile in FARM_PROFILES:
            series = synth_farm(profile, seed=1, days=3)
            assert series.capacity == profile.curve.capacity
            assert series.farm_id == profile.name

    def test_zero_days(self):
        with pytest.raises(DataError):
            synth_windfarm(seed=0, days=0)


class TestNormalization:
    """Tests for fit_norm, apply_norm and denorm_power."""

    def test_midpoint(self):
        series = make_series(11)
        stats = fit_norm(series)
        norm = apply_norm(series, stats)
        assert norm.values[5, 1] == pytest.approx(0.5)
        assert norm.values[0, 1] == 0.0

    def test_round_trip(self):
        series = synth_windfarm(seed=5, days=2)
        stats = fit_norm(series)
        back = denorm_power(apply_norm(series, stats).values[:, 0], stats)
        assert np.max(np.abs(back - series.power)) <= 1e-12

    def test_constant_channel(self):
        series = make_series(5)
        series.nwp[:, 2] = 3.0
        stats = fit_norm(series)
        assert stats.constant[4]
        assert np.all(apply_norm(series, stats).values[:, 4] == 0.5)

    def test_out_of_range_not_clipped(self):
        series = make_series(20)
        stats = fit_norm(series, (0, 10))
        values = apply_norm(series, stats).values
        assert values[19, 1] > 1.0

    def test_empty_range(self):
        with pytest.raises(DataError):
            fit_norm(make_series(5), (3, 3))

    def test_stats_array_round_trip(self):
        stats = fit_norm(make_series(7))
        assert type(stats).from_array(stats.to_array()) == stats


class TestWindows:
    """Tests for build_windows."""

    def test_exact_boundary_count(self):
        series = make_series(23)
        windows = build_windows(apply_norm(series, fit_norm(series)))
        assert len(windows) == 1
        assert windows.origins.tolist() == [14]

    def test_worked_alignment(self):
        series = make_series(200)
        stats = fit_norm(series)
        origin = 32
        windows = build_windows(apply_norm(series, stats), (origin + 8, origin + 9))
        window = windows[0]
        assert series.timestamps[window.origin_index].strftime('%H:%M') == '08:00'

        speed_range = stats.maxs[1] - stats.mins[1]
        nwp_idx = np.rint(window.matrix[0] * (stats.maxs[2] - stats.mins[2]) + stats.mins[2]).astype(int)
        hist_idx = np.rint(window.matrix[5] * speed_range + stats.mins[1]).astype(int)
        assert series.timestamps[nwp_idx[0]].strftime('%H:%M') == '08:15'
        assert series.timestamps[nwp_idx[-1]].strftime('%H:%M') == '11:45'
        assert series.timestamps[hist_idx[0]].strftime('%H:%M') == '04:30'
        assert series.timestamps[hist_idx[-1]].strftime('%H:%M') == '08:00'
        assert nwp_idx.tolist() == list(range(33, 48))
        assert hist_idx.tolist() == list(range(18, 33))

    def test_hist_power_matches_series(self):
        series = synth_windfarm(seed=2, days=2)
        stats = fit_norm(series)
        windows = build_windows(apply_norm(series, stats), (50, 120))
        for window in windows:
            t = window.origin_index
            restored = denorm_power(window.matrix[6], stats)
            assert np.allclose(restored, series.power[t - 14:t + 1], atol=1e-12)

    def test_channel_view(self):
        series = synth_windfarm(seed=2, days=1)
        window = build_windows(apply_norm(series, fit_norm(series)))[0]
        nwp, speed, power = window.channel_view
        assert np.array_equal(np.vstack([nwp, speed, power]), window.matrix)

    def test_targets_and_skips(self):
        series = make_series(40)
        windows = build_windows(apply_norm(series, fit_norm(series)), (0, 40))
        assert windows.skipped == 22
        assert np.array_equal(windows.targets, windows.origins + 8)

    def test_nwp_clamped_at_series_end(self):
        series = make_series(30)
        windows = build_windows(apply_norm(series, fit_norm(series)), (29, 30))
        last = windows.matrix[0, 0]
        assert last[-1] == last[-2] == pytest.approx(1.0)

    def test_future_power_does_not_change_window(self):
        series = synth_windfarm(seed=6, days=1)
        stats = fit_norm(series)
        before = build_windows(apply_norm(series, stats), (60, 61)).matrix.copy()
        series.power[53:] = 0.0
        series.speed[53:] = 0.0
        after = build_windows(apply_norm(series, stats), (60, 61)).matrix
        assert np.array_equal(before, after)

    def test_too_short(self):
        series = make_series(22)
        with pytest.raises(DataError):
            build_windows(apply_norm(series, fit_norm(series)))

    def test_every(self):
        series = make_series(60)
        windows = build_windows(apply_norm(series, fit_norm(series)))
        assert len(windows.every(2)) == (len(windows) + 1) // 2


class TestPearson:
    """Tests for pearson."""

    def test_identity_and_negation(self):
        x = [1.0, 2.0, 5.0, 3.0]
        assert pearson(x, x) == pytest.approx(1.0)
        assert pearson(x, [-v for v in x]) == pytest.approx(-1.0)

    def test_hand_example(self):
        assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.981981, abs=1e-6)

    def test_constant_input(self):
        with pytest.raises(DataError):
            pearson([1.0, 1.0], [1.0, 2.0])


def test_day_span():
    assert day_span(2) == (192, 288)
    assert day_span(0, days=3) == (0, 288)
