"""
Experiment runners: stage-1 architecture comparison, blender comparison
with an extrapolation scenario, and the full pipeline against persistence.
"""

import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .data import WindSeries
from .ensemble import METHODS, BlendDataset, grid_search
from .errors import ConfigError, DataError, FitError
from .metrics import AccuracyTable, abs_diff_stats, mae, paired_ttest, persistence_forecast, rmse
from .models import ARCHITECTURES, ArchConfig, TrainConfig
from .pipeline import Backtester, BacktestRecord, PlanConfig, make_plan

logger = logging.getLogger(__name__)

SEASON_NAMES = {12: 'winter', 1: 'winter', 2: 'winter', 3: 'spring', 4: 'spring', 5: 'spring',
                6: 'summer', 7: 'summer', 8: 'summer', 9: 'autumn', 10: 'autumn', 11: 'autumn'}
FORECAST_COLUMNS = ['case', 'seed', 'method', 'origin_timestamp', 'y_real', 'y_hat']


@dataclass
class ExperimentSettings:
    """Everything an experiment needs besides the farms."""

    plan: PlanConfig = field(default_factory=PlanConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    seeds: Tuple[int, ...] = (0,)
    seasons: int = 4
    season_spacing: int = 91
    threads: int = 1
    train_stride: int = 1
    grids: Dict[str, Sequence[float]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.seasons < 1 or self.season_spacing < 1:
            raise ConfigError("seasons and season_spacing must be positive")


@dataclass(frozen=True)
class Case:
    farm: WindSeries
    season: str
    test_start_day: int

    @property
    def key(self) -> str:
        return f"{self.farm.farm_id}/{self.season}"


@dataclass
class ExperimentResult:
    """An accuracy table plus named side tables, each written as ``<name>.csv``."""

    name: str
    accuracy: AccuracyTable
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)

    def write(self, out_dir: str) -> List[str]:
        os.makedirs(out_dir, exist_ok=True)
        written = [os.path.join(out_dir, 'accuracy.csv')]
        self.accuracy.to_frame().to_csv(written[0], index=False, lineterminator='\n')
        for name, frame in self.tables.items():
            path = os.path.join(out_dir, f'{name}.csv')
            frame.to_csv(path, index=False, lineterminator='\n')
            written.append(path)
        return written


def check_cases(farms: Sequence[WindSeries], settings: ExperimentSettings) -> None:
    """
    Raises:
        ConfigError: With fewer than two farms or fewer than two seasons.
    """
    if len(farms) < 2 or settings.seasons < 2:
        raise ConfigError(f"experiments need at least 2 farms and 2 seasons, got "
                          f"{len(farms)} farm(s) and {settings.seasons} season(s)")


def season_cases(farms: Sequence[WindSeries], settings: ExperimentSettings) -> List[Case]:
    """
    Test epochs at ``season_spacing``-day offsets, the first as early as the
    plan allows, labelled by the season of their first day.

    Raises:
        DataError: If a farm is too short for the requested seasons.
    """
    cfg = settings.plan
    first = cfg.stage1_len + cfg.val_len
    cases = []
    for farm in farms:
        labels: List[str] = []
        for k in range(settings.seasons):
            day = first + k * settings.season_spacing
            make_plan(len(farm), cfg, test_start_day=day)
            label = SEASON_NAMES[farm.timestamps[day * cfg.steps_per_day].month]
            if label in labels:
                label = f"{label}{sum(l.startswith(label) for l in labels) + 1}"
            labels.append(label)
            cases.append(Case(farm, label, day))
    return cases


def _backtester(case: Case, seed: int, settings: ExperimentSettings) -> Backtester:
    plan = make_plan(len(case.farm), settings.plan, test_start_day=case.test_start_day)
    return Backtester(case.farm, plan, settings.train, settings.arch, seed=seed,
                      threads=1, train_stride=settings.train_stride, grids=settings.grids)


def _map_cases(fn: Callable[[Case], object], cases: Sequence[Case], threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, cases))
    return [fn(case) for case in cases]


def _concat(records: Sequence[BacktestRecord], pick: Callable[[BacktestRecord], np.ndarray]) -> np.ndarray:
    return np.concatenate([pick(r) for r in records]) if records else np.zeros(0)


def _forecast_rows(case: Case, seed: int, method: str, records: Sequence[BacktestRecord],
                   pick: Callable[[BacktestRecord], np.ndarray]) -> pd.DataFrame:
    stamps = np.concatenate([r.timestamps.strftime('%Y-%m-%dT%H:%M:%SZ') for r in records])
    return pd.DataFrame({'case': case.key, 'seed': seed, 'method': method, 'origin_timestamp': stamps,
                         'y_real': _concat(records, lambda r: r.y_real),
                         'y_hat': _concat(records, pick)})


def pairwise_ttests(table: AccuracyTable, methods: Sequence[str]) -> pd.DataFrame:
    """
    One paired t-test per method pair on RMSE and MAE values pooled over
    every case.
    """
    rows = []
    for a, b in itertools.combinations(methods, 2):
        va = table.values(a, 'rmse') + table.values(a, 'mae')
        vb = table.values(b, 'rmse') + table.values(b, 'mae')
        try:
            res = paired_ttest(va, vb)
            rows.append([f"{a}-{b}", res.t_stat, res.p_value, res.dof, res.ci_low, res.ci_high])
        except (DataError, FitError) as e:
            logger.warning("t-test %s vs %s skipped: %s", a, b, e)
            rows.append([f"{a}-{b}", np.nan, np.nan, len(va) - 1, np.nan, np.nan])
    return pd.DataFrame(rows, columns=['pair', 't', 'p', 'dof', 'ci_low', 'ci_high'])


def run_experiment1(farms: Sequence[WindSeries], settings: ExperimentSettings) -> ExperimentResult:
    """Stage-1-only backtests: compare the four architectures."""
    check_cases(farms, settings)
    cases = season_cases(farms, settings)

    def run_case(case: Case):
        runs = [(seed, _backtester(case, seed, settings).run_stage1_only()) for seed in settings.seeds]
        return case, runs

    table = AccuracyTable()
    variance_rows, frames = [], []
    for case, runs in _map_cases(run_case, cases, settings.threads):
        records = [r for _, recs in runs for r in recs]
        truth = _concat(records, lambda r: r.y_real)
        for arch in ARCHITECTURES:
            yhat = _concat(records, lambda r: r.stage1[arch])
            table.add(case.farm.farm_id, case.season, arch, truth, yhat)
            variance_rows.append([case.farm.farm_id, case.season, arch, *abs_diff_stats(truth, yhat)])
            frames += [_forecast_rows(case, seed, arch, recs, lambda r: r.stage1[arch])
                       for seed, recs in runs]
        logger.info("experiment 1: %s done", case.key)

    return ExperimentResult('exp1', table, {
        'ttests': pairwise_ttests(table, ARCHITECTURES),
        'variance': pd.DataFrame(variance_rows, columns=['farm', 'season', 'method', 'mean', 'variance']),
        'forecasts': pd.concat(frames, ignore_index=True)[FORECAST_COLUMNS],
    })


@dataclass
class Scenario:
    """Stage-2 training data inside [0, boundary] and a test day that leaves it."""

    train: BlendDataset
    test: BlendDataset
    boundary: float

    @property
    def out_of_range(self) -> np.ndarray:
        return self.test.targets > self.boundary


def extrapolation_scenario(seed: int, capacity: float = 48.0, boundary: float = 38.0,
                           train_days: int = 10, steps_per_day: int = 96) -> Scenario:
    """
    Build stage-1-like forecasts for a stage-2 window whose real power never
    exceeds ``boundary`` and a test day ramping from half the boundary up to
    capacity.

    Raises:
        DataError: If the constructed ranges do not straddle the boundary.
    """
    if not 0 < boundary < capacity:
        raise DataError(f"boundary {boundary} must lie inside (0, {capacity})")
    rng = np.random.default_rng(seed)
    n_train = train_days * steps_per_day
    phase = np.linspace(0.0, 2 * np.pi * train_days / 2.5, n_train)
    train_truth = boundary * 0.5 * (1.0 - np.cos(phase)) * rng.uniform(0.8, 1.0, n_train)
    test_truth = np.linspace(0.5 * boundary, capacity, steps_per_day)

    gains = np.array([0.97, 1.0, 1.02, 0.99])
    offsets = np.array([0.3, -0.2, 0.1, 0.0])

    def stage1(truth: np.ndarray) -> np.ndarray:
        noise = rng.normal(0.0, 0.02 * capacity, (truth.size, gains.size))
        return np.clip(truth[:, None] * gains + offsets + noise, 0.0, capacity)

    train = BlendDataset(stage1(train_truth), np.minimum(train_truth, boundary))
    test = BlendDataset(stage1(test_truth), test_truth)
    if train.targets.max() > boundary or test.targets.max() <= boundary:
        raise DataError("scenario does not straddle the extrapolation boundary")
    return Scenario(train, test, boundary)


def run_scenario(scenario: Scenario, methods: Sequence[str] = METHODS, seed: int = 0,
                 grids: Optional[Mapping[str, Sequence[float]]] = None) -> pd.DataFrame:
    """Per-method errors on the scenario's test day, overall and beyond the boundary."""
    grids = grids or {}
    out = scenario.out_of_range
    rows = []
    for method in methods:
        blender = grid_search(method, scenario.train, grids.get(method), seed=seed)
        yhat = blender.predict(scenario.test.features)
        y = scenario.test.targets
        rows.append([seed, method, blender.hyperparameter, rmse(y[out], yhat[out]),
                     mae(y[out], yhat[out]), rmse(y, yhat)])
    return pd.DataFrame(rows, columns=['seed', 'method', 'hyperparameter', 'rmse_out', 'mae_out',
                                       'rmse_all'])


def _scenario_frame(scenario: Scenario, seed: int) -> pd.DataFrame:
    parts = []
    for name, data in (('train', scenario.train), ('test', scenario.test)):
        parts.append(pd.DataFrame({'seed': seed, 'set': name, 'index': np.arange(len(data)),
                                   'y_real': data.targets}))
    return pd.concat(parts, ignore_index=True)


def run_experiment2(farms: Sequence[WindSeries], settings: ExperimentSettings,
                    methods: Sequence[str] = METHODS) -> ExperimentResult:
    """
    Full backtests with each blender on shared stage-1 forecasts, compared
    with SIMO, plus the constructed extrapolation scenario.
    """
    check_cases(farms, settings)
    cases = season_cases(farms, settings)

    def run_case(case: Case):
        return case, [(seed, _backtester(case, seed, settings).run(methods)) for seed in settings.seeds]

    table = AccuracyTable()
    frames = []
    for case, runs in _map_cases(run_case, cases, settings.threads):
        first = runs[0][1][methods[0]]
        all_records = [r for _, recs in runs for r in recs[methods[0]]]
        truth = _concat(all_records, lambda r: r.y_real)
        table.add(case.farm.farm_id, case.season, 'SIMO', truth,
                  _concat(all_records, lambda r: r.stage1['SIMO']))
        frames += [_forecast_rows(case, seed, 'SIMO', recs[methods[0]], lambda r: r.stage1['SIMO'])
                   for seed, recs in runs]
        for method in methods:
            records = [r for _, recs in runs for r in recs[method]]
            table.add(case.farm.farm_id, case.season, method, truth, _concat(records, lambda r: r.y_blend))
            frames += [_forecast_rows(case, seed, method, recs[method], lambda r: r.y_blend)
                       for seed, recs in runs]
        logger.info("experiment 2: %s done (%d cycles)", case.key, len(first))

    capacity = max(f.capacity for f in farms)
    scenario_errors, scenario_frames = [], []
    for seed in settings.seeds:
        scenario = extrapolation_scenario(seed, capacity=capacity, boundary=capacity * 38.0 / 48.0,
                                          steps_per_day=settings.plan.steps_per_day)
        scenario_errors.append(run_scenario(scenario, methods, seed, settings.grids))
        scenario_frames.append(_scenario_frame(scenario, seed))

    return ExperimentResult('exp2', table, {
        'scenario': pd.concat(scenario_frames, ignore_index=True),
        'scenario_errors': pd.concat(scenario_errors, ignore_index=True),
        'forecasts': pd.concat(frames, ignore_index=True)[FORECAST_COLUMNS],
    })


def run_experiment3(farms: Sequence[WindSeries], settings: ExperimentSettings) -> ExperimentResult:
    """The full pipeline with the RR blender against persistence."""
    check_cases(farms, settings)
    cases = season_cases(farms, settings)
    horizon = settings.plan.horizon

    def run_case(case: Case):
        return case, [(seed, _backtester(case, seed, settings).run(['RR'])['RR'])
                      for seed in settings.seeds]

    table = AccuracyTable()
    frames = []
    errors: Dict[Tuple[str, str], List[np.ndarray]] = {}
    for case, runs in _map_cases(run_case, cases, settings.threads):
        records = [r for _, recs in runs for r in recs]
        truth = _concat(records, lambda r: r.y_real)

        def persistence(r: BacktestRecord, farm: WindSeries = case.farm) -> np.ndarray:
            return persistence_forecast(farm.power, r.origins, horizon)

        for method, pick in (('TSF', lambda r: r.y_blend), ('P', persistence)):
            yhat = _concat(records, pick)
            table.add(case.farm.farm_id, case.season, method, truth, yhat)
            errors.setdefault((case.farm.farm_id, method), []).append(np.abs(truth - yhat))
            frames += [_forecast_rows(case, seed, method, recs, pick) for seed, recs in runs]
        logger.info("experiment 3: %s done", case.key)

    rows = []
    for farm in dict.fromkeys(f for f, _ in errors):
        for method in ('TSF', 'P'):
            e = np.concatenate(errors[(farm, method)])
            rows.append([farm, method, *abs_diff_stats(e, np.zeros_like(e)), e.size])
    for method in ('TSF', 'P'):
        e = np.concatenate([np.concatenate(v) for (_, m), v in errors.items() if m == method])
        rows.append(['all', method, *abs_diff_stats(e, np.zeros_like(e)), e.size])

    return ExperimentResult('exp3', table, {
        'abs_diff': pd.DataFrame(rows, columns=['farm', 'method', 'mean', 'variance', 'n']),
        'forecasts': pd.concat(frames, ignore_index=True)[FORECAST_COLUMNS],
    })


EXPERIMENTS = {1: run_experiment1, 2: run_experiment2, 3: run_experiment3}
