"""
Run configuration: INI files with [data], [plan], [train] and [run]
sections, command-line overrides, and reproducibility manifests.
"""

import configparser
import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

from .errors import ConfigError
from .experiments import ExperimentSettings
from .models import ARCHITECTURES, ArchConfig, TrainConfig
from .ensemble import METHODS
from .pipeline import PlanConfig

SECTIONS = ('data', 'plan', 'train', 'run')


def _opt(default: Any, section: str, help: str = ''):
    return field(default=default, metadata={'section': section, 'help': help})


@dataclass
class RunConfig:
    """Every setting of a run; each field is one INI key and one ``--flag``."""

    data_dir: str = _opt('data', 'data', 'directory of farm CSV files')
    capacity: float = _opt(0.0, 'data', 'farm capacity in MW (0: read farms.ini)')
    farms: int = _opt(3, 'data', 'number of synthetic farms')
    days: int = _opt(400, 'data', 'days of synthetic data per farm')
    synth_seed: int = _opt(0, 'data', 'seed of the synthetic generator')

    stage1_len: int = _opt(365, 'plan', 'stage-1 training window, days')
    val_len: int = _opt(10, 'plan', 'validation window, days')
    stage2_len: int = _opt(10, 'plan', 'stage-2 training window, days')
    test_len: int = _opt(10, 'plan', 'test epoch, days')
    l_c1: int = _opt(10, 'plan', 'stage-1 retraining interval, days')
    l_c2: int = _opt(1, 'plan', 'stage-2 refit interval, days')
    steps_per_day: int = _opt(96, 'plan', 'grid points per day')

    horizon: int = _opt(8, 'train', 'forecast horizon, steps')
    n_hist: int = _opt(15, 'train', 'history length, steps')
    batch_size: int = _opt(32, 'train')
    max_epochs: int = _opt(100, 'train')
    patience: int = _opt(10, 'train')
    learning_rate: float = _opt(1e-3, 'train')
    alpha: float = _opt(1.0, 'train', 'power loss weight')
    beta: float = _opt(0.9, 'train', 'speed loss weight')
    hidden_dim: int = _opt(64, 'train', 'LSTM hidden size')
    train_stride: int = _opt(1, 'train', 'keep every k-th stage-1 training window')

    arch: str = _opt('SISO', 'run', 'architecture for train')
    blender: str = _opt('RR', 'run', 'stage-2 method')
    seeds: Tuple[int, ...] = _opt((0,), 'run', 'comma-separated seeds')
    threads: int = _opt(1, 'run')
    seasons: int = _opt(4, 'run', 'test epochs per farm in experiments')
    season_spacing: int = _opt(91, 'run', 'days between test epochs')
    out: str = _opt('out', 'run', 'output directory')

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        Raises:
            ConfigError: For non-positive lengths, l_c1 not a multiple of
                l_c2, or unknown architecture/blender names.
        """
        for name in ('farms', 'days', 'stage1_len', 'val_len', 'stage2_len', 'test_len', 'l_c1',
                     'l_c2', 'steps_per_day', 'horizon', 'n_hist', 'batch_size', 'max_epochs',
                     'patience', 'hidden_dim', 'train_stride', 'threads', 'seasons',
                     'season_spacing'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.l_c1 % self.l_c2:
            raise ConfigError(f"l_c1 ({self.l_c1}) must be a multiple of l_c2 ({self.l_c2})")
        if self.capacity < 0:
            raise ConfigError(f"capacity must be non-negative, got {self.capacity}")
        self.arch = self.arch.upper()
        self.blender = self.blender.upper()
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture '{self.arch}'")
        if self.blender not in METHODS:
            raise ConfigError(f"unknown blender '{self.blender}'")
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    def plan_config(self) -> PlanConfig:
        return PlanConfig(self.stage1_len, self.val_len, self.stage2_len, self.test_len, self.l_c1,
                          self.l_c2, self.steps_per_day, self.horizon, self.n_hist)

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        return TrainConfig(alpha=self.alpha, beta=self.beta, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, patience=self.patience,
                           learning_rate=self.learning_rate,
                           seed=self.seeds[0] if seed is None else seed)

    def arch_config(self) -> ArchConfig:
        return ArchConfig(hidden_dim=self.hidden_dim)

    def experiment_settings(self) -> ExperimentSettings:
        return ExperimentSettings(plan=self.plan_config(), train=self.train_config(),
                                  arch=self.arch_config(), seeds=self.seeds, seasons=self.seasons,
                                  season_spacing=self.season_spacing, threads=self.threads,
                                  train_stride=self.train_stride)

    def to_parser(self) -> configparser.ConfigParser:
        parser = configparser.ConfigParser(interpolation=None)
        for section in SECTIONS:
            parser.add_section(section)
        for f in dataclasses.fields(self):
            parser.set(f.metadata['section'], f.name, format_value(getattr(self, f.name)))
        return parser


def config_fields() -> Tuple[dataclasses.Field, ...]:
    return dataclasses.fields(RunConfig)


def format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ','.join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def parse_value(f: dataclasses.Field, raw: str) -> Any:
    """Convert the text of one key to the field's type."""
    kind = type(f.default)
    try:
        if kind is tuple:
            return tuple(int(v) for v in raw.split(',') if v.strip())
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{f.name}: cannot parse '{raw}' as {kind.__name__}")
    return raw.strip()


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Read an INI file (if given) and apply ``overrides`` on top.

    Unknown keys and sections other than [manifest] are rejected.

    Raises:
        ConfigError: For unreadable files, unknown keys or invalid values.
    """
    values: Dict[str, Any] = {}
    by_name = {f.name: f for f in config_fields()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}")
        for section in parser.sections():
            if section == 'manifest':
                continue
            if section not in SECTIONS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in parser.items(section):
                f = by_name.get(key)
                if f is None or f.metadata['section'] != section:
                    raise ConfigError(f"{path}: unknown key '{key}' in [{section}]")
                values[key] = parse_value(f, raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in by_name:
            raise ConfigError(f"unknown setting '{key}'")
        values[key] = parse_value(by_name[key], value) if isinstance(value, str) else value
    return RunConfig(**values)


def write_manifest(path: str, config: RunConfig, extra: Optional[Mapping[str, Any]] = None) -> None:
    """Write the full config plus a [manifest] section; ``load_config`` reads it back."""
    from . import __version__

    parser = config.to_parser()
    parser.add_section('manifest')
    parser.set('manifest', 'version', __version__)
    for key, value in (extra or {}).items():
        parser.set('manifest', key, format_value(value))
    with open(path, 'w', newline='\n') as fh:
        parser.write(fh)
