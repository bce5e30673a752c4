"""
Command-line interface for windcast.
"""

import argparse
import configparser
import glob
import logging
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional

from . import __version__
from .config import RunConfig, config_fields, load_config, write_manifest
from .data import (FARM_PROFILES, WindSeries, apply_norm, build_windows, fit_norm, ingest_csv, pearson,
                   synth_farm, write_csv)
from .errors import ConfigError, CycleError, DataError, UsageError, WindcastError
from .experiments import EXPERIMENTS
from .models import build_model, save_model, train_stage1
from .pipeline import Backtester, cycle_summary, make_plan, write_backtest_csv
from .report import build_report

logger = logging.getLogger('windcast')

FARMS_INI = 'farms.ini'

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class ArgumentParser(argparse.ArgumentParser):
    """Raises UsageError instead of exiting, so main() owns the exit code."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _config(args: argparse.Namespace) -> RunConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in config_fields()}
    if getattr(args, 'seed', None) is not None:
        overrides['seeds'] = (args.seed,)
    return load_config(args.config, overrides)


def read_capacities(data_dir: str) -> Dict[str, float]:
    """Capacity (MW) per farm from ``farms.ini``; empty if the file is absent."""
    path = os.path.join(data_dir, FARMS_INI)
    if not os.path.exists(path):
        return {}
    parser = configparser.ConfigParser(interpolation=None)
    parser.read(path)
    return {name: parser.getfloat(name, 'capacity') for name in parser.sections()}


def load_farm(path: str, config: RunConfig) -> WindSeries:
    """
    Read a farm CSV; capacity comes from ``--capacity`` or ``farms.ini``
    next to the file.
    """
    if not os.path.exists(path):
        raise DataError(f"{path}: file not found")
    capacity = config.capacity
    if not capacity:
        farm_id = os.path.splitext(os.path.basename(path))[0]
        capacity = read_capacities(os.path.dirname(path) or '.').get(farm_id, 0.0)
        if not capacity:
            raise ConfigError(f"no capacity for {path}: pass --capacity or add {FARMS_INI}")
    return ingest_csv(path, capacity)


def cmd_synth(args: argparse.Namespace) -> int:
    """Write synthetic farm CSVs, their farms.ini and a run manifest."""
    config = _config(args)
    seed = args.seed if args.seed is not None else config.synth_seed
    os.makedirs(config.data_dir, exist_ok=True)
    farms = configparser.ConfigParser(interpolation=None)
    profiles = []
    for k in range(config.farms):
        profile = FARM_PROFILES[k % len(FARM_PROFILES)]
        name = f"wf{k + 1}"
        profiles.append(f"{name}={profile.name}")
        series = synth_farm(profile, seed + k, config.days, farm_id=name)
        path = os.path.join(config.data_dir, f"{name}.csv")
        write_csv(series, path)
        farms[name] = {'profile': profile.name, 'capacity': repr(profile.curve.capacity),
                       'cut_in': repr(profile.curve.cut_in), 'rated': repr(profile.curve.rated),
                       'cut_out': repr(profile.curve.cut_out)}
        print(f"  {path}: {len(series)} rows, {profile.name} curve, "
              f"r(power, speed) = {pearson(series.power, series.speed):.3f}")
    with open(os.path.join(config.data_dir, FARMS_INI), 'w', newline='\n') as fh:
        farms.write(fh)
    write_manifest(os.path.join(config.data_dir, 'manifest.ini'), replace(config, synth_seed=seed),
                   {'command': 'synth', 'seed': seed, 'profiles': ','.join(profiles)})
    print(f"\nWrote {config.farms} farm(s) to {config.data_dir}")
    return EXIT_OK


def cmd_ingest_check(args: argparse.Namespace) -> int:
    """Validate a farm CSV and summarize it."""
    config = _config(args)
    series = load_farm(args.file, config)
    print(f"\nFarm {series.farm_id}: OK\n")
    print(f"  Rows: {len(series)}")
    print(f"  From: {series.timestamps[0].strftime('%Y-%m-%d %H:%M')}")
    print(f"  To:   {series.timestamps[-1].strftime('%Y-%m-%d %H:%M')}")
    print(f"  Capacity: {series.capacity:g} MW")
    print(f"  Mean power: {series.power.mean():.3f} MW")
    print(f"  Mean speed: {series.speed.mean():.3f} m/s")
    if len(series) > 1 and series.power.std() > 0 and series.speed.std() > 0:
        print(f"  r(power, speed): {pearson(series.power, series.speed):.3f}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """Train one architecture on the plan's first stage-1 window."""
    config = _config(args)
    series = load_farm(args.file, config)
    plan = make_plan(len(series), config.plan_config())
    period = plan.periods()[0]
    cfg = plan.config
    norm = apply_norm(series, fit_norm(series, period.stage1))
    train = build_windows(norm, period.stage1, cfg.horizon, cfg.n_hist).every(config.train_stride)
    val = build_windows(norm, period.validation, cfg.horizon, cfg.n_hist)
    model = build_model(config.arch, config.seeds[0], config.arch_config(), cfg.n_hist)
    train_stage1(model, train, val, config.train_config())

    os.makedirs(config.out, exist_ok=True)
    path = os.path.join(config.out, f"{series.farm_id}_{config.arch.lower()}.wcm")
    save_model(model, path)
    write_manifest(os.path.join(config.out, 'manifest.ini'), config,
                   {'command': 'train', 'data': args.file, 'epochs_run': model.epochs_run,
                    'val_rmse': model.best_val_rmse})
    print(f"{config.arch}: {model.epochs_run} epoch(s), validation RMSE "
          f"{model.best_val_rmse:.4f} MW -> {path}")
    return EXIT_OK


def cmd_backtest(args: argparse.Namespace) -> int:
    """Run the two-stage backtest on one farm."""
    config = _config(args)
    series = load_farm(args.file, config)
    plan = make_plan(len(series), config.plan_config())
    backtester = Backtester(series, plan, config.train_config(), config.arch_config(),
                            seed=config.seeds[0], threads=config.threads,
                            train_stride=config.train_stride)
    records = backtester.run([config.blender])[config.blender]

    os.makedirs(config.out, exist_ok=True)
    csv_path = os.path.join(config.out, f"backtest_{series.farm_id}.csv")
    write_backtest_csv(records, csv_path)
    extra = {'command': 'backtest', 'data': args.file, 'blender': config.blender}
    for row in cycle_summary(records):
        extra[f"cycle_{row['cycle']}"] = (f"days {row['days']} {row['method']} "
                                          f"{row['hyperparameter']:g} stage2 {row['stage2']}")
    write_manifest(os.path.join(config.out, 'manifest.ini'), config, extra)

    print(f"\n{len(records)} cycle(s), {sum(len(r) for r in records)} forecasts -> {csv_path}")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    """Run experiment 1, 2 or 3 on every farm CSV in the data directory."""
    config = _config(args)
    paths = sorted(glob.glob(os.path.join(config.data_dir, '*.csv')))
    if not paths:
        raise DataError(f"{config.data_dir}: no farm CSV files")
    farms = [load_farm(p, config) for p in paths]
    result = EXPERIMENTS[args.which](farms, config.experiment_settings())

    out_dir = os.path.join(config.out, f"exp{args.which}")
    written = result.write(out_dir)
    write_manifest(os.path.join(out_dir, 'manifest.ini'), config,
                   {'command': f'exp {args.which}', 'farms': ','.join(f.farm_id for f in farms)})

    print(f"\nExperiment {args.which}: {len(result.accuracy.cases())} case(s)\n")
    print(f"{'Farm':<8} {'Season':<10} {'Method':<6} {'RMSE':>8} {'MAE':>8}")
    print("-" * 44)
    for row in result.accuracy:
        print(f"{row.farm:<8} {row.season:<10} {row.method:<6} {row.rmse:>8.4f} {row.mae:>8.4f}")
    print()
    for path in written:
        print(f"  {path}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    """Render tables and plot series from an experiment directory."""
    bundle = build_report(args.directory, args.out)
    target = args.out or args.directory
    for rel in sorted(list(bundle.text) + list(bundle.frames)):
        print(f"  {os.path.join(target, rel)}")
    return EXIT_OK


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='INI config file')
    parser.add_argument('--seed', type=int, help='single seed (synthetic data seed for synth)')
    for f in config_fields():
        flag = '--' + f.name.replace('_', '-')
        kind = type(f.default)
        parser.add_argument(flag, dest=f.name, default=None,
                            type=str if kind is tuple else kind, help=f.metadata['help'] or None)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='windcast', description='Two-stage wind power forecasting')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help='log progress (-vv for debug output)')

    subparsers = parser.add_subparsers(dest='command', help='Commands', parser_class=ArgumentParser)

    synth_parser = subparsers.add_parser('synth', help='Generate synthetic farm CSVs')
    _add_config_flags(synth_parser)
    synth_parser.set_defaults(func=cmd_synth)

    check_parser = subparsers.add_parser('ingest-check', help='Validate a farm CSV')
    check_parser.add_argument('file', help='Farm CSV')
    _add_config_flags(check_parser)
    check_parser.set_defaults(func=cmd_ingest_check)

    train_parser = subparsers.add_parser('train', help='Train one stage-1 architecture')
    train_parser.add_argument('file', help='Farm CSV')
    _add_config_flags(train_parser)
    train_parser.set_defaults(func=cmd_train)

    backtest_parser = subparsers.add_parser('backtest', help='Run the two-stage backtest')
    backtest_parser.add_argument('file', help='Farm CSV')
    _add_config_flags(backtest_parser)
    backtest_parser.set_defaults(func=cmd_backtest)

    exp_parser = subparsers.add_parser('exp', help='Run an experiment')
    exp_parser.add_argument('which', type=int, choices=sorted(EXPERIMENTS), help='Experiment id')
    _add_config_flags(exp_parser)
    exp_parser.set_defaults(func=cmd_experiment)

    report_parser = subparsers.add_parser('report', help='Build tables from experiment output')
    report_parser.add_argument('directory', help='Experiment output directory')
    report_parser.add_argument('-o', '--out', help='Report directory (default: the input directory)')
    report_parser.set_defaults(func=cmd_report)

    return parser


def _exit_code(error: Exception) -> int:
    if isinstance(error, CycleError):
        error = error.cause
    if isinstance(error, ConfigError):
        return EXIT_USAGE
    if isinstance(error, (DataError, OSError)):
        return EXIT_DATA
    return EXIT_RUNTIME


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE

    if args.command is None:
        parser.print_help()
        return EXIT_OK

    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr)
    logger.debug("windcast %s: %s", __version__, args.command)

    try:
        return args.func(args)
    except (WindcastError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return _exit_code(e)


if __name__ == '__main__':
    sys.exit(main())
