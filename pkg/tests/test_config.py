"""Tests for run configuration."""

import os
import shutil
import tempfile

import pytest

from windcast.config import RunConfig, load_config, write_manifest
from windcast.errors import ConfigError


@pytest.fixture
def temp_dir():
    """Create a temporary directory."""
    path = tempfile.mkdtemp()
    yield path
    shutil.rmtree(path)


def write_ini(directory, text):
    path = os.path.join(directory, 'run.ini')
    with open(path, 'w') as f:
        f.write(text)
    return path


class TestRunConfig:
    """Tests for RunConfig validation and derived settings."""

    def test_defaults(self):
        config = load_config()
        assert config == RunConfig()
        assert config.plan_config().required_days == 385

    def test_non_positive(self):
        with pytest.raises(ConfigError, match='days'):
            RunConfig(days=0)

    def test_l_c1_multiple(self):
        with pytest.raises(ConfigError):
            RunConfig(l_c1=10, l_c2=4)

    def test_names_normalized(self):
        config = RunConfig(arch='mimo', blender='gpr')
        assert (config.arch, config.blender) == ('MIMO', 'GPR')

    def test_unknown_blender(self):
        with pytest.raises(ConfigError):
            RunConfig(blender='KNN')

    def test_unknown_architecture(self):
        with pytest.raises(ConfigError):
            RunConfig(arch='CNN')

    def test_train_config_seed(self):
        config = RunConfig(seeds=(4, 5), alpha=2.0)
        assert config.train_config().seed == 4
        assert config.train_config(9).seed == 9
        assert config.train_config().alpha == 2.0

    def test_experiment_settings(self):
        settings = RunConfig(seeds=(1, 2), seasons=2, hidden_dim=8).experiment_settings()
        assert settings.seeds == (1, 2)
        assert settings.seasons == 2
        assert settings.arch.hidden_dim == 8


class TestLoadConfig:
    """Tests for load_config."""

    def test_reads_sections(self, temp_dir):
        path = write_ini(temp_dir, "[plan]\ntest_len = 20\n\n[run]\nseeds = 1,2,3\n")
        config = load_config(path)
        assert config.test_len == 20
        assert config.seeds == (1, 2, 3)

    def test_overrides_win(self, temp_dir):
        path = write_ini(temp_dir, "[train]\nmax_epochs = 5\n")
        assert load_config(path, {'max_epochs': 7}).max_epochs == 7
        assert load_config(path, {'max_epochs': None}).max_epochs == 5

    def test_string_overrides_are_parsed(self):
        config = load_config(overrides={'seeds': '3,4', 'learning_rate': '0.01'})
        assert config.seeds == (3, 4)
        assert config.learning_rate == 0.01

    def test_unknown_key(self, temp_dir):
        path = write_ini(temp_dir, "[train]\nepochs = 5\n")
        with pytest.raises(ConfigError, match='unknown key'):
            load_config(path)

    def test_key_in_wrong_section(self, temp_dir):
        path = write_ini(temp_dir, "[run]\nmax_epochs = 5\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_unknown_section(self, temp_dir):
        path = write_ini(temp_dir, "[model]\nhidden_dim = 5\n")
        with pytest.raises(ConfigError, match='unknown section'):
            load_config(path)

    def test_bad_value(self, temp_dir):
        path = write_ini(temp_dir, "[data]\nfarms = three\n")
        with pytest.raises(ConfigError, match='farms'):
            load_config(path)

    def test_missing_file(self, temp_dir):
        with pytest.raises(ConfigError):
            load_config(os.path.join(temp_dir, 'nope.ini'))

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            load_config(overrides={'nonsense': 1})


class TestManifest:
    """Tests for write_manifest."""

    def test_manifest_loads_back(self, temp_dir):
        config = RunConfig(seeds=(2, 3), test_len=20, learning_rate=0.005, blender='SVR')
        path = os.path.join(temp_dir, 'manifest.ini')
        write_manifest(path, config, {'command': 'backtest', 'cycle_0': 'day 0 RR 1'})
        assert load_config(path) == config

    def test_manifest_records_version(self, temp_dir):
        from windcast import __version__

        path = os.path.join(temp_dir, 'manifest.ini')
        write_manifest(path, RunConfig())
        with open(path) as f:
            text = f.read()
        assert '[manifest]' in text
        assert f'version = {__version__}' in text
