"""
Forecast accuracy metrics, paired t-tests and the persistence baseline.
"""

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .errors import DataError, FitError


def _pair(y: Sequence[float], yhat: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise DataError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise DataError("cannot score an empty forecast")
    return y, yhat


def rmse(y: Sequence[float], yhat: Sequence[float]) -> float:
    """Root mean square error."""
    y, yhat = _pair(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def mae(y: Sequence[float], yhat: Sequence[float]) -> float:
    """Mean absolute error."""
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def abs_diff_stats(y: Sequence[float], yhat: Sequence[float]) -> Tuple[float, float]:
    """
    Sample mean and unbiased variance of the absolute errors.

    Raises:
        DataError: With fewer than two points.
    """
    y, yhat = _pair(y, yhat)
    if y.size < 2:
        raise DataError("variance needs at least two points")
    errors = np.abs(y - yhat)
    return float(errors.mean()), float(errors.var(ddof=1))


@dataclass(frozen=True)
class TTestResult:
    """Two-tailed paired t-test on a - b with a 95% CI on the mean difference."""

    t_stat: float
    p_value: float
    dof: int
    ci_low: float
    ci_high: float
    mean_diff: float


def paired_ttest(a: Sequence[float], b: Sequence[float], confidence: float = 0.95) -> TTestResult:
    """
    Paired t-test on ``a - b``.

    Raises:
        DataError: For mismatched lengths or fewer than two pairs.
        FitError: If every difference is identical (zero variance).
    """
    a, b = _pair(a, b)
    if a.size < 2:
        raise DataError("a paired t-test needs at least two pairs")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise FitError("paired t-test is undefined: all differences are identical")
    n = d.size
    dof = n - 1
    mean = float(d.mean())
    se = sd / math.sqrt(n)
    t_stat = mean / se
    p_value = float(np.clip(2.0 * stats.t.sf(abs(t_stat), dof), np.finfo(float).tiny, 1.0))
    half = float(stats.t.ppf(0.5 + confidence / 2.0, dof)) * se
    return TTestResult(t_stat, p_value, dof, mean - half, mean + half, mean)


def persistence_forecast(power: Sequence[float], origins: Sequence[int], h: int) -> np.ndarray:
    """
    Naive forecast: the power at the origin is the forecast for origin + h.

    ``h`` does not change the value, only which target it is compared to.

    Raises:
        DataError: If an origin has no observation in ``power``.
    """
    power = np.asarray(power, dtype=np.float64)
    origins = np.asarray(origins, dtype=np.int64)
    if h < 1:
        raise DataError(f"horizon must be at least 1 step, got {h}")
    bad = np.flatnonzero((origins < 0) | (origins >= power.size))
    if bad.size:
        raise DataError(f"origin {origins[bad[0]]} has no current observation")
    return power[origins].copy()


@dataclass
class AccuracyRow:
    farm: str
    season: str
    method: str
    rmse: float
    mae: float


@dataclass
class AccuracyTable:
    """RMSE and MAE (MW) keyed by (farm, season, method)."""

    rows: List[AccuracyRow] = field(default_factory=list)

    COLUMNS = ('farm', 'season', 'method', 'rmse', 'mae')

    def add(self, farm: str, season: str, method: str, y: Sequence[float],
            yhat: Sequence[float]) -> AccuracyRow:
        row = AccuracyRow(farm, season, method, rmse(y, yhat), mae(y, yhat))
        self.rows.append(row)
        return row

    def methods(self) -> List[str]:
        seen: List[str] = []
        for row in self.rows:
            if row.method not in seen:
                seen.append(row.method)
        return seen

    def cases(self) -> List[Tuple[str, str]]:
        seen: List[Tuple[str, str]] = []
        for row in self.rows:
            if (row.farm, row.season) not in seen:
                seen.append((row.farm, row.season))
        return seen

    def values(self, method: str, metric: str) -> List[float]:
        """One value per case, in case order."""
        lookup = {(r.farm, r.season): getattr(r, metric) for r in self.rows if r.method == method}
        return [lookup[case] for case in self.cases()]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([[getattr(r, c) for c in self.COLUMNS] for r in self.rows],
                            columns=list(self.COLUMNS))

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterable[AccuracyRow]:
        return iter(self.rows)
