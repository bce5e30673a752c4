"""
Render experiment CSVs into comparison tables and plot-ready series.
"""

import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .errors import DataError, FitError
from .metrics import AccuracyTable

BEST_MARK = '*'

_SCHEMAS = {
    'accuracy.csv': list(AccuracyTable.COLUMNS),
    'ttests.csv': ['pair', 't', 'p', 'dof', 'ci_low', 'ci_high'],
    'forecasts.csv': ['case', 'seed', 'method', 'origin_timestamp', 'y_real', 'y_hat'],
    'scenario.csv': ['seed', 'set', 'index', 'y_real'],
}


def ci95(values: Sequence[float]) -> Tuple[float, float, float]:
    """
    Student-t 95% confidence interval on the mean.

    Returns:
        (mean, ci_low, ci_high)

    Raises:
        FitError: For fewer than two values or a constant input.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise FitError("a confidence interval needs at least two values")
    sd = float(x.std(ddof=1))
    if sd == 0.0:
        raise FitError("a confidence interval is undefined for constant input")
    mean = float(x.mean())
    half = float(stats.t.ppf(0.975, x.size - 1)) * sd / math.sqrt(x.size)
    return mean, mean - half, mean + half


@dataclass
class ReportBundle:
    """Rendered tables keyed by relative output path."""

    text: Dict[str, str] = field(default_factory=dict)
    frames: Dict[str, pd.DataFrame] = field(default_factory=dict)

    def write(self, out_dir: str) -> List[str]:
        written = []
        for rel, content in sorted(self.text.items()):
            path = os.path.join(out_dir, rel)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, 'w', newline='\n') as f:
                f.write(content)
            written.append(path)
        for rel, frame in sorted(self.frames.items()):
            path = os.path.join(out_dir, rel)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            frame.to_csv(path, index=False, lineterminator='\n')
            written.append(path)
        return written


def _read(exp_dir: str, name: str, required: bool = True) -> Optional[pd.DataFrame]:
    path = os.path.join(exp_dir, name)
    if not os.path.exists(path):
        if required:
            raise DataError(f"{path}: file not found")
        return None
    frame = pd.read_csv(path)
    for column in _SCHEMAS[name]:
        if column not in frame.columns:
            raise DataError(f"{path}: missing column '{column}'")
    return frame


def best_methods(row: pd.Series) -> List[str]:
    """Every method whose value equals the row minimum."""
    values = row.dropna()
    if values.empty:
        return []
    return [m for m, v in values.items() if v == values.min()]


def accuracy_wide(accuracy: pd.DataFrame) -> pd.DataFrame:
    """One row per (farm, season, metric), one column per method, plus the best marker."""
    methods = list(dict.fromkeys(accuracy['method']))
    cases = list(dict.fromkeys(zip(accuracy['farm'], accuracy['season'])))
    indexed = accuracy.set_index(['farm', 'season', 'method'])
    rows = []
    for farm, season in cases:
        for metric in ('rmse', 'mae'):
            values = pd.Series({m: indexed[metric].get((farm, season, m), np.nan) for m in methods})
            rows.append([farm, season, metric.upper(), *values.tolist(),
                         ';'.join(best_methods(values))])
    return pd.DataFrame(rows, columns=['farm', 'season', 'metric', *methods, 'best'])


def render_accuracy(wide: pd.DataFrame) -> str:
    methods = [c for c in wide.columns if c not in ('farm', 'season', 'metric', 'best')]
    header = f"{'Farm':<8} {'Season':<10} {'Metric':<6} " + ' '.join(f"{m:>10}" for m in methods)
    lines = [header, '-' * len(header)]
    for _, row in wide.iterrows():
        best = set(row['best'].split(';')) if row['best'] else set()
        cells = []
        for m in methods:
            mark = BEST_MARK if m in best else ''
            cells.append(f"{row[m]:.4f}{mark}".rjust(10))
        lines.append(f"{row['farm']:<8} {row['season']:<10} {row['metric']:<6} " + ' '.join(cells))
    lines.append('')
    lines.append(f"{BEST_MARK} best in row (RMSE and MAE in MW)")
    return '\n'.join(lines) + '\n'


def ci_table(accuracy: pd.DataFrame) -> pd.DataFrame:
    """95% intervals of per-case RMSE and MAE for each method."""
    rows = []
    for method in dict.fromkeys(accuracy['method']):
        subset = accuracy[accuracy['method'] == method]
        for metric in ('rmse', 'mae'):
            try:
                mean, low, high = ci95(subset[metric])
            except FitError:
                mean, low, high = float(subset[metric].mean()), np.nan, np.nan
            rows.append([method, metric.upper(), mean, low, high, len(subset)])
    return pd.DataFrame(rows, columns=['method', 'metric', 'mean', 'ci_low', 'ci_high', 'n'])


def render_ttests(ttests: pd.DataFrame) -> str:
    header = f"{'Pair':<12} {'t':>9} {'p':>8} {'dof':>4} {'95% CI':>22}"
    lines = [header, '-' * len(header)]
    for _, row in ttests.iterrows():
        ci = f"[{row['ci_low']:.4f}, {row['ci_high']:.4f}]"
        lines.append(f"{row['pair']:<12} {row['t']:>9.4f} {row['p']:>8.4f} {int(row['dof']):>4} {ci:>22}")
    return '\n'.join(lines) + '\n'


def forecast_series(forecasts: pd.DataFrame) -> pd.DataFrame:
    """Long format: one row per (case, seed, timestamp, series) with 'real' as its own series."""
    keys = ['case', 'seed', 'origin_timestamp']
    real = (forecasts.drop_duplicates(keys)[keys + ['y_real']]
            .rename(columns={'y_real': 'power'}).assign(series='real'))
    predicted = forecasts[keys + ['method', 'y_hat']].rename(columns={'method': 'series', 'y_hat': 'power'})
    out = pd.concat([real, predicted], ignore_index=True)[keys + ['series', 'power']]
    return out.sort_values(keys + ['series'], kind='mergesort').reset_index(drop=True)


def extrapolation_ranges(scenario: pd.DataFrame) -> pd.DataFrame:
    """Min and max real power of the stage-2 training and test sets, per seed."""
    grouped = scenario.groupby(['seed', 'set'], sort=True)['y_real']
    return grouped.agg(['min', 'max', 'count']).reset_index()


def build_report(exp_dir: str, out_dir: Optional[str] = None) -> ReportBundle:
    """
    Build the report for one experiment output directory and write it under
    ``out_dir`` (default: ``exp_dir``).

    Raises:
        DataError: If accuracy.csv is missing or any input lacks a column.
    """
    accuracy = _read(exp_dir, 'accuracy.csv')
    if (accuracy['rmse'] < accuracy['mae'] - 1e-9).any():
        raise DataError(f"{os.path.join(exp_dir, 'accuracy.csv')}: a row has RMSE below MAE")
    bundle = ReportBundle()
    wide = accuracy_wide(accuracy)
    bundle.text['tables/accuracy.txt'] = render_accuracy(wide)
    bundle.frames['tables/accuracy.csv'] = wide
    bundle.frames['tables/ci95.csv'] = ci_table(accuracy)

    ttests = _read(exp_dir, 'ttests.csv', required=False)
    if ttests is not None:
        bundle.text['tables/ttests.txt'] = render_ttests(ttests)
    forecasts = _read(exp_dir, 'forecasts.csv', required=False)
    if forecasts is not None:
        bundle.frames['plots/forecast_vs_real.csv'] = forecast_series(forecasts)
    scenario = _read(exp_dir, 'scenario.csv', required=False)
    if scenario is not None:
        bundle.frames['plots/extrapolation_ranges.csv'] = extrapolation_ranges(scenario)

    bundle.write(out_dir or exp_dir)
    return bundle
