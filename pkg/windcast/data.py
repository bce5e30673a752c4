"""
Wind-farm time series: schema, CSV ingestion, synthetic generation,
min-max normalization and model input windows.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .errors import DataError

logger = logging.getLogger(__name__)

STEP = pd.Timedelta(minutes=15)
STEPS_PER_DAY = 96
DEFAULT_HORIZON = 8
DEFAULT_HISTORY = 15

CSV_HEADER = [
    'timestamp', 'power_mw', 'speed_ms', 'nwp_speed_ms', 'nwp_dir_deg',
    'nwp_humidity_pct', 'nwp_pressure_hpa', 'nwp_temp_c',
]
NWP_CHANNELS = ('nwp_speed', 'nwp_dir', 'nwp_humidity', 'nwp_pressure', 'nwp_temp')
# Column order of the normalized channel matrix.
CHANNELS = ('power', 'speed') + NWP_CHANNELS
# Row order of the 7x15 model input.
WINDOW_ROWS = NWP_CHANNELS + ('hist_speed', 'hist_power')

Span = Union[slice, Tuple[int, int], None]


def _span_bounds(span: Span, length: int) -> Tuple[int, int]:
    if span is None:
        return 0, length
    if isinstance(span, slice):
        start, stop, _ = span.indices(length)
        return start, stop
    start, stop = span
    return max(0, int(start)), min(length, int(stop))


@dataclass(frozen=True)
class TurbineCurve:
    """Idealized turbine power curve with a cubic ramp from cut-in to rated."""

    cut_in: float
    rated: float
    cut_out: float
    capacity: float

    def __post_init__(self):
        if not 0 < self.cut_in < self.rated < self.cut_out:
            raise DataError(f"need 0 < cut_in < rated < cut_out, got "
                            f"{self.cut_in}/{self.rated}/{self.cut_out}")
        if self.capacity <= 0:
            raise DataError(f"capacity must be positive, got {self.capacity}")


@dataclass(frozen=True)
class FarmProfile:
    """A wind farm's turbine curve and wind climate."""

    name: str
    curve: TurbineCurve
    mean_speed: float
    std_speed: float


FARM_PROFILES = (
    FarmProfile('WF1', TurbineCurve(4.0, 11.6, 25.0, 49.5), 5.38, 2.85),
    FarmProfile('WF2', TurbineCurve(3.5, 14.5, 25.0, 48.0), 5.73, 3.33),
    FarmProfile('WF3', TurbineCurve(3.0, 11.0, 21.0, 48.0), 6.25, 3.53),
)
DEFAULT_CURVE = FARM_PROFILES[2].curve


def power_curve(curve: TurbineCurve, speed: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    Convert wind speed (m/s) to farm power (MW).

    Raises:
        DataError: If any speed is negative.
    """
    v = np.asarray(speed, dtype=np.float64)
    if np.any(v < 0):
        raise DataError("wind speed must be non-negative")
    ramp = (v ** 3 - curve.cut_in ** 3) / (curve.rated ** 3 - curve.cut_in ** 3)
    power = np.where(v < curve.cut_in, 0.0,
                     np.where(v < curve.rated, curve.capacity * ramp,
                              np.where(v < curve.cut_out, curve.capacity, 0.0)))
    return float(power) if power.ndim == 0 else power


@dataclass
class WindSeries:
    """Aligned 15-minute power, speed and NWP series of one farm."""

    farm_id: str
    timestamps: pd.DatetimeIndex
    power: np.ndarray
    speed: np.ndarray
    nwp: np.ndarray
    capacity: float

    def __post_init__(self):
        self.timestamps = pd.DatetimeIndex(self.timestamps)
        self.power = np.asarray(self.power, dtype=np.float64)
        self.speed = np.asarray(self.speed, dtype=np.float64)
        self.nwp = np.asarray(self.nwp, dtype=np.float64).reshape(-1, len(NWP_CHANNELS))
        self.validate()

    def validate(self) -> None:
        """
        Check the series invariants.

        Raises:
            DataError: Naming the first offending (1-based) row.
        """
        n = len(self.timestamps)
        if not (len(self.power) == len(self.speed) == len(self.nwp) == n):
            raise DataError("all channels must have the same length as the timestamps")
        if n > 1:
            steps = np.diff(self.timestamps.values)
            bad = np.flatnonzero(steps != np.timedelta64(15, 'm'))
            if bad.size:
                raise DataError(f"timestamp {self.timestamps[bad[0] + 1]} breaks the 15-minute grid",
                                row=int(bad[0]) + 2)
        bad = np.flatnonzero((self.power < 0) | (self.power > self.capacity))
        if bad.size:
            raise DataError(f"power {self.power[bad[0]]} outside [0, {self.capacity}] MW",
                            row=int(bad[0]) + 1)
        bad = np.flatnonzero(self.speed < 0)
        if bad.size:
            raise DataError(f"negative wind speed {self.speed[bad[0]]}", row=int(bad[0]) + 1)

    def __len__(self) -> int:
        return len(self.timestamps)

    def channels(self) -> np.ndarray:
        """Return the (n, 7) channel matrix in ``CHANNELS`` order."""
        return np.column_stack([self.power, self.speed, self.nwp])

    def slice(self, start: int, stop: int) -> 'WindSeries':
        return WindSeries(self.farm_id, self.timestamps[start:stop], self.power[start:stop],
                          self.speed[start:stop], self.nwp[start:stop], self.capacity)

    def __repr__(self) -> str:
        return f"WindSeries('{self.farm_id}', n={len(self)}, capacity={self.capacity})"


def ingest_csv(path: str, capacity: float, farm_id: Optional[str] = None) -> WindSeries:
    """
    Read and validate a farm CSV.

    Args:
        path: CSV file with the exact ``CSV_HEADER``.
        capacity: Installed capacity (MW) used for the range check.
        farm_id: Identifier; defaults to the file stem.

    Raises:
        FileNotFoundError: If the file does not exist.
        DataError: On a header mismatch, an unparseable value, a gap or
            duplicate timestamp, or an out-of-range value.
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    columns = list(frame.columns)
    missing = [c for c in CSV_HEADER if c not in columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
    if columns != CSV_HEADER:
        raise DataError(f"{path}: header must be {','.join(CSV_HEADER)}")

    timestamps = pd.to_datetime(frame['timestamp'], utc=True, errors='coerce', format='ISO8601')
    bad = np.flatnonzero(timestamps.isna().to_numpy())
    if bad.size:
        raise DataError(f"unparseable timestamp '{frame['timestamp'].iloc[bad[0]]}'",
                        row=int(bad[0]) + 1)

    values = {}
    for column in CSV_HEADER[1:]:
        parsed = pd.to_numeric(frame[column], errors='coerce').to_numpy(dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(parsed))
        if bad.size:
            raise DataError(f"unparseable number '{frame[column].iloc[bad[0]]}' in {column}",
                            row=int(bad[0]) + 1)
        values[column] = parsed

    if farm_id is None:
        farm_id = Path(path).stem
    return WindSeries(
        farm_id=farm_id,
        timestamps=pd.DatetimeIndex(timestamps),
        power=values['power_mw'],
        speed=values['speed_ms'],
        nwp=np.column_stack([values[c] for c in CSV_HEADER[3:]]),
        capacity=float(capacity),
    )


def write_csv(series: WindSeries, path: str) -> None:
    """Write the canonical CSV form of a series."""
    frame = pd.DataFrame({
        'timestamp': series.timestamps.strftime('%Y-%m-%dT%H:%M:%SZ'),
        'power_mw': series.power,
        'speed_ms': series.speed,
    })
    for i, column in enumerate(CSV_HEADER[3:]):
        frame[column] = series.nwp[:, i]
    frame.to_csv(path, index=False, lineterminator='\n')


def _ar1(rng: np.random.Generator, n: int, coeff: float, std: float) -> np.ndarray:
    """Stationary AR(1) noise with marginal standard deviation ``std``."""
    shocks = rng.standard_normal(n) * std * np.sqrt(1.0 - coeff ** 2)
    if n:
        shocks[0] = shocks[0] / np.sqrt(1.0 - coeff ** 2)
    return lfilter([1.0], [1.0, -coeff], shocks)


def synth_windfarm(
    seed: int,
    days: int,
    curve: TurbineCurve = DEFAULT_CURVE,
    ar_coeff: float = 0.98,
    speed_std: float = 1.6,
    base_speed: float = 8.0,
    diurnal_amp: float = 1.0,
    seasonal_amp: float = 1.5,
    power_noise: float = 0.02,
    nwp_bias: float = 0.3,
    nwp_noise: float = 0.8,
    start: str = '2019-01-01',
    farm_id: str = 'synthetic',
) -> WindSeries:
    """
    Generate a synthetic wind farm on the 15-minute grid.

    Wind speed is a clipped sum of an AR(1) process, a diurnal and a seasonal
    sinusoid and a baseline. Power follows the turbine curve plus clipped
    observation noise (``power_noise`` is a fraction of capacity). NWP speed
    is the real speed plus a bias and autocorrelated noise; the other NWP
    channels are smooth weather signals with noise.

    Args:
        seed: Random seed; the output is a pure function of all arguments.
        days: Number of days (96 points each).

    Returns:
        A validated WindSeries.
    """
    if days < 1:
        raise DataError(f"days must be at least 1, got {days}")
    n = days * STEPS_PER_DAY
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    day_phase = 2 * np.pi * (t % STEPS_PER_DAY) / STEPS_PER_DAY
    year_phase = 2 * np.pi * t / (STEPS_PER_DAY * 365.25)

    speed = (base_speed + _ar1(rng, n, ar_coeff, speed_std)
             + diurnal_amp * np.sin(day_phase - np.pi / 2)
             + seasonal_amp * np.cos(year_phase))
    speed = np.maximum(speed, 0.0)

    noise = power_noise * curve.capacity * rng.standard_normal(n)
    power = np.clip(power_curve(curve, speed) + noise, 0.0, curve.capacity)

    nwp_speed = np.maximum(speed + nwp_bias + nwp_noise * _ar1(rng, n, 0.9, 1.0), 0.0)
    direction = np.mod(200.0 + np.cumsum(rng.normal(0.0, 2.0, n))
                       + 10.0 * nwp_noise * rng.standard_normal(n), 360.0)
    humidity = np.clip(65.0 + 15.0 * np.sin(day_phase) - 10.0 * np.cos(year_phase)
                       + 5.0 * _ar1(rng, n, 0.95, 1.0), 0.0, 100.0)
    pressure = 1013.0 - 6.0 * np.cos(year_phase) + 4.0 * _ar1(rng, n, 0.995, 1.0)
    temperature = (10.0 - 12.0 * np.cos(year_phase) + 4.0 * np.sin(day_phase - 0.75 * np.pi)
                   + 1.5 * _ar1(rng, n, 0.95, 1.0))

    timestamps = pd.date_range(pd.Timestamp(start, tz='UTC'), periods=n, freq=STEP)
    return WindSeries(
        farm_id=farm_id,
        timestamps=timestamps,
        power=power,
        speed=speed,
        nwp=np.column_stack([nwp_speed, direction, humidity, pressure, temperature]),
        capacity=curve.capacity,
    )


def synth_farm(profile: FarmProfile, seed: int, days: int, **overrides) -> WindSeries:
    """Generate a farm whose speed climate follows ``profile``."""
    diurnal = overrides.pop('diurnal_amp', 1.0)
    seasonal = overrides.pop('seasonal_amp', 1.5)
    ar_var = profile.std_speed ** 2 - 0.5 * diurnal ** 2 - 0.5 * seasonal ** 2
    return synth_windfarm(
        seed, days, curve=profile.curve, base_speed=profile.mean_speed,
        speed_std=float(np.sqrt(max(ar_var, 0.5))), diurnal_amp=diurnal,
        seasonal_amp=seasonal, farm_id=overrides.pop('farm_id', profile.name), **overrides)


@dataclass(frozen=True)
class NormStats:
    """Per-channel minimum and maximum, in ``CHANNELS`` order."""

    mins: Tuple[float, ...]
    maxs: Tuple[float, ...]

    @property
    def constant(self) -> Tuple[bool, ...]:
        return tuple(hi == lo for lo, hi in zip(self.mins, self.maxs))

    def to_array(self) -> np.ndarray:
        return np.array([self.mins, self.maxs], dtype=np.float64)

    @classmethod
    def from_array(cls, values: np.ndarray) -> 'NormStats':
        return cls(tuple(float(v) for v in values[0]), tuple(float(v) for v in values[1]))


@dataclass
class NormalizedSeries:
    """A series mapped channel-wise to [0, 1] over the fitting range."""

    farm_id: str
    timestamps: pd.DatetimeIndex
    values: np.ndarray
    stats: NormStats
    capacity: float

    def __len__(self) -> int:
        return len(self.values)


def fit_norm(series: WindSeries, span: Span = None) -> NormStats:
    """
    Fit min-max statistics on ``span`` of the series.

    Raises:
        DataError: If the range is empty.
    """
    start, stop = _span_bounds(span, len(series))
    if stop <= start:
        raise DataError("cannot fit normalization on an empty range")
    block = series.channels()[start:stop]
    return NormStats(tuple(float(v) for v in block.min(axis=0)),
                     tuple(float(v) for v in block.max(axis=0)))


def _normalize(values: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    width = hi - lo
    constant = width == 0
    scaled = (values - lo) / np.where(constant, 1.0, width)
    return np.where(constant, 0.5, scaled)


def apply_norm(series: WindSeries, stats: NormStats) -> NormalizedSeries:
    """Normalize every channel; values outside the fitting range are not clipped."""
    lo = np.array(stats.mins)
    hi = np.array(stats.maxs)
    return NormalizedSeries(series.farm_id, series.timestamps,
                            _normalize(series.channels(), lo, hi), stats, series.capacity)


def denorm_power(values: Union[np.ndarray, Sequence[float]], stats: NormStats) -> np.ndarray:
    """Map normalized power back to MW."""
    lo, hi = stats.mins[0], stats.maxs[0]
    return np.asarray(values, dtype=np.float64) * (hi - lo) + lo


def denorm_speed(values: Union[np.ndarray, Sequence[float]], stats: NormStats) -> np.ndarray:
    lo, hi = stats.mins[1], stats.maxs[1]
    return np.asarray(values, dtype=np.float64) * (hi - lo) + lo


@dataclass
class InputWindow:
    """The model input and targets for one forecast origin."""

    origin_index: int
    matrix: np.ndarray
    target_power: float
    target_speed: float

    @property
    def channel_view(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(nwp 5xN, hist_speed 1xN, hist_power 1xN) views of ``matrix``."""
        return self.matrix[:5], self.matrix[5:6], self.matrix[6:7]


class WindowSet(Sequence[InputWindow]):
    """A batch of input windows stored as stacked arrays."""

    def __init__(self, origins: np.ndarray, matrix: np.ndarray, target_power: np.ndarray,
                 target_speed: np.ndarray, horizon: int, stats: NormStats,
                 timestamps: pd.DatetimeIndex, skipped: int = 0, capacity: float = float('inf')):
        self.origins = origins
        self.matrix = matrix
        self.target_power = target_power
        self.target_speed = target_speed
        self.horizon = horizon
        self.stats = stats
        self.timestamps = timestamps
        self.skipped = skipped
        self.capacity = capacity

    @property
    def targets(self) -> np.ndarray:
        return self.origins + self.horizon

    @property
    def nwp(self) -> np.ndarray:
        return self.matrix[:, :5, :]

    @property
    def hist_speed(self) -> np.ndarray:
        return self.matrix[:, 5:6, :]

    @property
    def hist_power(self) -> np.ndarray:
        return self.matrix[:, 6:7, :]

    def __len__(self) -> int:
        return len(self.origins)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return self.select(np.arange(len(self))[index])
        return InputWindow(int(self.origins[index]), self.matrix[index],
                           float(self.target_power[index]), float(self.target_speed[index]))

    def __iter__(self) -> Iterator[InputWindow]:
        for i in range(len(self)):
            yield self[i]

    def select(self, indices: np.ndarray) -> 'WindowSet':
        """Return the subset at ``indices`` (array of positions)."""
        indices = np.asarray(indices, dtype=np.int64)
        return WindowSet(self.origins[indices], self.matrix[indices],
                         self.target_power[indices], self.target_speed[indices],
                         self.horizon, self.stats, self.timestamps[indices], 0, self.capacity)

    def every(self, stride: int) -> 'WindowSet':
        return self if stride <= 1 else self.select(np.arange(0, len(self), stride))

    def __repr__(self) -> str:
        return f"WindowSet(n={len(self)}, skipped={self.skipped})"


def build_windows(series: NormalizedSeries, span: Span = None, h: int = DEFAULT_HORIZON,
                  n_hist: int = DEFAULT_HISTORY, anchor: str = 'target') -> WindowSet:
    """
    Build one input window per index in ``span``.

    With ``anchor='target'`` the span holds target indices and the origin of
    a window is ``t = target - h``. With ``anchor='origin'`` the span holds
    origins.

    History rows hold ``t-n_hist+1 .. t``; NWP rows hold ``t+1 .. t+n_hist``
    (NWP is issued a day ahead), repeating the last row past the end of the
    series. Origins that lack ``n_hist`` points of history or whose target
    falls past the end of the series are skipped.

    Raises:
        DataError: If no window fits in the range.
        ValueError: For an unknown ``anchor``.
    """
    n = len(series)
    start, stop = _span_bounds(span, n)
    if anchor == 'target':
        origins = np.arange(start, stop) - h
    elif anchor == 'origin':
        origins = np.arange(start, stop)
    else:
        raise ValueError(f"anchor must be 'target' or 'origin', got {anchor!r}")
    valid = (origins - n_hist + 1 >= 0) & (origins + h < n)
    skipped = int(np.count_nonzero(~valid))
    origins = origins[valid]
    if origins.size == 0:
        raise DataError(f"range [{start}, {stop}) is too short for any window "
                        f"(history {n_hist}, horizon {h})")
    if skipped:
        logger.info("skipped %d origin(s) without %d steps of history or a target", skipped, n_hist)

    values = series.values
    hist_idx = origins[:, None] + np.arange(-n_hist + 1, 1)
    nwp_idx = np.minimum(origins[:, None] + np.arange(1, n_hist + 1), n - 1)

    matrix = np.empty((len(origins), len(WINDOW_ROWS), n_hist))
    matrix[:, :5, :] = values[nwp_idx][:, :, 2:].transpose(0, 2, 1)
    matrix[:, 5, :] = values[hist_idx, 1]
    matrix[:, 6, :] = values[hist_idx, 0]
    return WindowSet(origins, matrix, values[origins + h, 0].copy(), values[origins + h, 1].copy(),
                     h, series.stats, series.timestamps[origins], skipped, series.capacity)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Sample Pearson correlation.

    Raises:
        DataError: For fewer than two points, unequal lengths or a constant input.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise DataError("pearson needs two equal-length sequences of at least 2 values")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0 or syy == 0:
        raise DataError("pearson is undefined for a constant input")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def day_span(day: int, days: int = 1) -> Tuple[int, int]:
    """Grid index range covering ``days`` days starting at ``day``."""
    return day * STEPS_PER_DAY, (day + days) * STEPS_PER_DAY
