"""
Two-stage rolling backtest.

Stage-1 networks are trained on a year-long window and retrained every
``l_c1`` days. A stage-2 blender is refitted every ``l_c2`` days on the
stage-1 forecasts of the ``stage2_len`` days just before the day being
forecast.

Stage-1 training, validation and stage-2 windows are laid out by target
index, forecast blocks by origin index. A block starting at ``t`` is
therefore forecast from models and blenders that saw no truth at or after
``t``.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .data import (DEFAULT_HISTORY, DEFAULT_HORIZON, STEPS_PER_DAY, Span, WindSeries, apply_norm,
                   build_windows, fit_norm)
from .ensemble import Blender, BlendDataset, grid_search
from .errors import ConfigError, CycleError, DataError, WindcastError
from .models import ARCHITECTURES, ArchConfig, Stage1Model, TrainConfig, build_model, predict, train_stage1

logger = logging.getLogger(__name__)

BACKTEST_COLUMNS = ['day_index', 'origin_timestamp', 'y_real', 'y_mimo', 'y_miso', 'y_simo',
                    'y_siso', 'y_blend']


@dataclass(frozen=True)
class PlanConfig:
    """Window lengths in days, plus the grid and window geometry."""

    stage1_len: int = 365
    val_len: int = 10
    stage2_len: int = 10
    test_len: int = 10
    l_c1: int = 10
    l_c2: int = 1
    steps_per_day: int = STEPS_PER_DAY
    horizon: int = DEFAULT_HORIZON
    n_hist: int = DEFAULT_HISTORY

    def __post_init__(self):
        for name in ('stage1_len', 'val_len', 'stage2_len', 'test_len', 'l_c1', 'l_c2',
                     'steps_per_day', 'horizon', 'n_hist'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.l_c1 % self.l_c2:
            raise ConfigError(f"l_c1 ({self.l_c1}) must be a multiple of l_c2 ({self.l_c2})")
        if self.stage2_len > self.val_len:
            raise ConfigError(f"stage2_len ({self.stage2_len}) may not exceed val_len "
                              f"({self.val_len}); the stage-2 window would overlap stage-1 training")

    @property
    def required_days(self) -> int:
        return self.stage1_len + self.val_len + self.test_len


@dataclass(frozen=True)
class Period:
    """One stage-1 retraining position: the training data and the test days it serves."""

    index: int
    offset: int
    stage1: Tuple[int, int]
    validation: Tuple[int, int]
    test: Tuple[int, int]


@dataclass(frozen=True)
class Cycle:
    """One stage-2 refit: its training window and the block it forecasts."""

    index: int
    period: Period
    day_index: int
    stage2: Tuple[int, int]
    forecast: Tuple[int, int]
    steps_per_day: int = STEPS_PER_DAY

    @property
    def days(self) -> Tuple[int, int]:
        """Half-open range of test days the forecast block covers."""
        n = -(-(self.forecast[1] - self.forecast[0]) // self.steps_per_day)
        return self.day_index, self.day_index + n


@dataclass(frozen=True)
class BacktestPlan:
    """
    Starts of the stage-1 training, validation, first stage-2 and test
    windows as grid indices (t_1, t_v, t_2, t_e), with the lengths
    that lay them out. Every span is a half-open grid range, of targets for
    the training windows and of origins for the test window.
    """

    t_1: int
    t_v: int
    t_2: int
    t_e: int
    extent: int
    config: PlanConfig

    def days(self, n: int) -> int:
        return n * self.config.steps_per_day

    def periods(self) -> List[Period]:
        cfg = self.config
        result = []
        for p in range(math.ceil(cfg.test_len / cfg.l_c1)):
            off = self.days(p * cfg.l_c1)
            test_stop = min(self.t_e + off + self.days(cfg.l_c1), self.t_e + self.days(cfg.test_len))
            result.append(Period(
                index=p,
                offset=off,
                stage1=(self.t_1 + off, self.t_1 + off + self.days(cfg.stage1_len)),
                validation=(self.t_v + off, self.t_v + off + self.days(cfg.val_len)),
                test=(self.t_e + off, test_stop),
            ))
        return result

    def cycles(self) -> List[Cycle]:
        cfg = self.config
        result = []
        for period in self.periods():
            start = period.test[0]
            while start < period.test[1]:
                stop = min(start + self.days(cfg.l_c2), period.test[1])
                result.append(Cycle(
                    index=len(result),
                    period=period,
                    day_index=(start - self.t_e) // cfg.steps_per_day,
                    stage2=(start - self.days(cfg.stage2_len), start),
                    forecast=(start, stop),
                    steps_per_day=cfg.steps_per_day,
                ))
                start = stop
        return result

    def check(self) -> None:
        """
        Raises:
            DataError: If a window leaves the series, stage-1 training overlaps
                a stage-2 window or the test days, or a stage-2 window holds a
                target at or after the first origin of its forecast block.
        """
        for cycle in self.cycles():
            s1, s2, fc = cycle.period.stage1, cycle.stage2, cycle.forecast
            if s1[0] < 0 or fc[1] > self.extent:
                raise DataError(f"cycle {cycle.index}: windows leave the series "
                                f"[0, {self.extent})")
            if s1[1] > s2[0] or s1[1] > cycle.period.test[0]:
                raise DataError(f"cycle {cycle.index}: stage-1 window {s1} overlaps "
                                f"stage-2 window {s2} or the test window")
            if s2[1] > fc[0]:
                raise DataError(f"cycle {cycle.index}: stage-2 window {s2} does not end "
                                f"before forecast block {fc}")


def make_plan(extent: Union[int, WindSeries], config: Optional[PlanConfig] = None,
              test_start_day: Optional[int] = None) -> BacktestPlan:
    """
    Lay out stage-1 training, validation and test windows back to back.
    The first stage-2 window is the validation window.

    With ``test_start_day`` the test epoch starts on that day and the other
    windows are placed immediately before it.

    Raises:
        DataError: If the series is too short for the layout.
    """
    config = config or PlanConfig()
    if isinstance(extent, WindSeries):
        extent = len(extent)
    per_day = config.steps_per_day
    if test_start_day is None:
        test_start_day = config.stage1_len + config.val_len
    t_e = test_start_day * per_day
    t_v = t_e - config.val_len * per_day
    t_1 = t_v - config.stage1_len * per_day
    t_2 = t_e - config.stage2_len * per_day
    needed = t_e + config.test_len * per_day + config.horizon
    if t_1 < 0 or needed > extent:
        raise DataError(f"series too short: plan needs {config.required_days} days plus "
                        f"{config.horizon} steps, series has {extent / per_day:g} days")
    plan = BacktestPlan(t_1, t_v, t_2, t_e, extent, config)
    plan.check()
    return plan


@dataclass
class BacktestRecord:
    """Forecasts for one cycle's block of test days."""

    cycle: int
    period: int
    day_index: int
    origins: np.ndarray
    days: np.ndarray
    timestamps: pd.DatetimeIndex
    y_real: np.ndarray
    stage1: Dict[str, np.ndarray]
    y_blend: Optional[np.ndarray] = None
    method: Optional[str] = None
    hyperparameter: float = float('nan')
    spans: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.origins)


def _period_seed(seed: int, period: int) -> int:
    return int(np.random.SeedSequence([seed, period]).generate_state(1)[0])


class Backtester:
    """
    Runs a plan over one series.

    Stage-1 models are trained once per period (cold start, fresh seed) and
    their forecasts can be blended by any number of blender methods.
    """

    def __init__(self, series: WindSeries, plan: BacktestPlan, train: Optional[TrainConfig] = None,
                 arch: Optional[ArchConfig] = None, seed: int = 0, threads: int = 1,
                 train_stride: int = 1, grids: Optional[Mapping[str, Sequence[float]]] = None):
        if len(series) < plan.extent:
            raise DataError(f"series has {len(series)} points, plan covers {plan.extent}")
        self.series = series
        self.plan = plan
        self.train = train or TrainConfig()
        self.arch = arch or ArchConfig()
        self.seed = seed
        self.threads = max(1, threads)
        self.train_stride = max(1, train_stride)
        self.grids = dict(grids or {})

    def train_period(self, period: Period) -> Tuple[Dict[str, Stage1Model], object]:
        """Fit normalization on the stage-1 window and train the four architectures."""
        cfg = self.plan.config
        stats = fit_norm(self.series, period.stage1)
        norm = apply_norm(self.series, stats)
        train_windows = build_windows(norm, period.stage1, cfg.horizon, cfg.n_hist).every(self.train_stride)
        val_windows = build_windows(norm, period.validation, cfg.horizon, cfg.n_hist)
        seed = _period_seed(self.seed, period.index)
        train_cfg = TrainConfig(**{**self.train.__dict__, 'seed': seed})

        def fit(architecture: str) -> Stage1Model:
            model = build_model(architecture, seed, self.arch, cfg.n_hist)
            return train_stage1(model, train_windows, val_windows, train_cfg)

        logger.info("period %d: training stage 1 on %s, validating on %s",
                    period.index, period.stage1, period.validation)
        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=min(self.threads, len(ARCHITECTURES))) as pool:
                models = list(pool.map(fit, ARCHITECTURES))
        else:
            models = [fit(a) for a in ARCHITECTURES]
        return dict(zip(ARCHITECTURES, models)), norm

    def forecast(self, models: Mapping[str, Stage1Model], norm, span: Span, anchor: str = 'target'):
        """Stage-1 forecasts (MW) for every target, or every origin, in ``span``."""
        cfg = self.plan.config
        windows = build_windows(norm, span, cfg.horizon, cfg.n_hist, anchor)
        forecasts = {a: predict(m, windows).power for a, m in models.items()}
        truth = self.series.power[windows.targets]
        return windows, forecasts, truth

    def run(self, methods: Sequence[str] = ('RR',)) -> Dict[str, List[BacktestRecord]]:
        """
        Run the full two-stage backtest once per blender method, sharing
        the stage-1 models and forecasts between methods.

        Raises:
            CycleError: Wrapping any error raised inside a cycle.
        """
        records: Dict[str, List[BacktestRecord]] = {m: [] for m in methods}
        models, norm, trained_for = None, None, None
        for cycle in self.plan.cycles():
            try:
                if trained_for != cycle.period.index:
                    models, norm = self.train_period(cycle.period)
                    trained_for = cycle.period.index
                _, s2_forecasts, s2_truth = self.forecast(models, norm, cycle.stage2)
                blend_data = BlendDataset.from_forecasts(s2_forecasts, s2_truth)
                windows, forecasts, truth = self.forecast(models, norm, cycle.forecast, 'origin')
                features = BlendDataset.from_forecasts(forecasts, truth).features
                for method in methods:
                    blender = grid_search(method, blend_data, self.grids.get(method),
                                          seed=self.seed, threads=self.threads)
                    y_blend = np.clip(blender.predict(features), 0.0, self.series.capacity)
                    records[method].append(self._record(cycle, windows, truth, forecasts,
                                                        y_blend, blender))
                logger.info("cycle %d (test day %d): stage-2 window %s, forecast %s",
                            cycle.index, cycle.day_index, cycle.stage2, cycle.forecast)
            except WindcastError as e:
                raise CycleError(cycle.index, e) from e
        return records

    def run_stage1_only(self) -> List[BacktestRecord]:
        """Stage-1 forecasts for every test block, without blending."""
        records = []
        models, norm, trained_for = None, None, None
        for cycle in self.plan.cycles():
            try:
                if trained_for != cycle.period.index:
                    models, norm = self.train_period(cycle.period)
                    trained_for = cycle.period.index
                windows, forecasts, truth = self.forecast(models, norm, cycle.forecast, 'origin')
                records.append(self._record(cycle, windows, truth, forecasts))
            except WindcastError as e:
                raise CycleError(cycle.index, e) from e
        return records

    def _record(self, cycle: Cycle, windows, truth: np.ndarray, forecasts: Dict[str, np.ndarray],
                y_blend: Optional[np.ndarray] = None,
                blender: Optional[Blender] = None) -> BacktestRecord:
        period = cycle.period
        return BacktestRecord(
            cycle=cycle.index,
            period=period.index,
            day_index=cycle.day_index,
            origins=windows.origins.copy(),
            days=cycle.day_index + (windows.origins - cycle.forecast[0]) // cycle.steps_per_day,
            timestamps=windows.timestamps,
            y_real=truth,
            stage1=dict(forecasts),
            y_blend=y_blend,
            method=blender.method if blender else None,
            hyperparameter=blender.hyperparameter if blender else float('nan'),
            spans={'stage1': period.stage1, 'validation': period.validation,
                   'stage2': cycle.stage2, 'forecast': cycle.forecast},
        )


def run_backtest(series: WindSeries, plan: BacktestPlan, blender_method: str = 'RR', seed: int = 0,
                 **kwargs) -> List[BacktestRecord]:
    """Full two-stage backtest with one blender. Extra keywords go to ``Backtester``."""
    return Backtester(series, plan, seed=seed, **kwargs).run([blender_method.upper()])[blender_method.upper()]


def run_stage1_only(series: WindSeries, plan: BacktestPlan, seed: int = 0,
                    **kwargs) -> List[BacktestRecord]:
    return Backtester(series, plan, seed=seed, **kwargs).run_stage1_only()


def records_frame(records: Sequence[BacktestRecord]) -> pd.DataFrame:
    """One row per forecast origin, in ``BACKTEST_COLUMNS`` order."""
    frames = []
    for r in records:
        blend = r.y_blend if r.y_blend is not None else np.full(len(r), np.nan)
        frames.append(pd.DataFrame({
            'day_index': r.days,
            'origin_timestamp': r.timestamps.strftime('%Y-%m-%dT%H:%M:%SZ'),
            'y_real': r.y_real,
            'y_mimo': r.stage1['MIMO'],
            'y_miso': r.stage1['MISO'],
            'y_simo': r.stage1['SIMO'],
            'y_siso': r.stage1['SISO'],
            'y_blend': blend,
        }))
    if not frames:
        return pd.DataFrame(columns=BACKTEST_COLUMNS)
    return pd.concat(frames, ignore_index=True)[BACKTEST_COLUMNS]


def write_backtest_csv(records: Sequence[BacktestRecord], path: str) -> None:
    records_frame(records).to_csv(path, index=False, lineterminator='\n')


def cycle_summary(records: Sequence[BacktestRecord]) -> List[Dict[str, object]]:
    """
    Per-cycle method, hyperparameter and window boundaries, for run manifests.
    ``days`` is the inclusive range of test days a block covers.
    """
    return [{'cycle': r.cycle, 'day_index': r.day_index,
             'days': f"{int(r.days.min())}-{int(r.days.max())}" if len(r) else '',
             'method': r.method or '',
             'hyperparameter': r.hyperparameter, **{k: f"{a}-{b}" for k, (a, b) in r.spans.items()}}
            for r in records]
