"""Tests for the CLI module."""

import configparser
import os
import shutil
import tempfile

import pandas as pd
import pytest

from windcast import __version__
from windcast.cli import main, read_capacities
from windcast.data import CSV_HEADER

SMALL_PLAN = ['--stage1-len', '3', '--val-len', '1', '--stage2-len', '1', '--test-len', '2',
              '--l-c1', '1']
QUICK_TRAIN = ['--hidden-dim', '5', '--max-epochs', '1', '--patience', '1', '--batch-size', '64',
               '--train-stride', '4']


@pytest.fixture
def temp_dir():
    """Create a temporary directory."""
    path = tempfile.mkdtemp()
    yield path
    shutil.rmtree(path)


@pytest.fixture
def data_dir(temp_dir):
    """One synthetic farm of seven days."""
    path = os.path.join(temp_dir, 'data')
    assert main(['synth', '--data-dir', path, '--farms', '1', '--days', '7']) == 0
    return path


class TestCLI:
    """Tests for CLI commands."""

    def test_main_no_args(self, capsys):
        """Test main with no arguments shows help."""
        assert main([]) == 0
        assert 'synth' in capsys.readouterr().out

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(['--version'])
        assert info.value.code == 0
        assert 'windcast' in capsys.readouterr().out

    def test_unknown_command(self, capsys):
        assert main(['forecast']) == 1
        assert 'Error' in capsys.readouterr().err

    def test_unknown_experiment(self, capsys):
        assert main(['exp', '4']) == 1

    def test_unknown_flag(self):
        assert main(['synth', '--no-such-flag']) == 1


class TestSynth:
    """Tests for the synth command."""

    def test_writes_farms(self, temp_dir, capsys):
        out = os.path.join(temp_dir, 'data')
        assert main(['synth', '--data-dir', out, '--farms', '2', '--days', '3']) == 0
        assert sorted(os.listdir(out)) == ['farms.ini', 'manifest.ini', 'wf1.csv', 'wf2.csv']
        frame = pd.read_csv(os.path.join(out, 'wf1.csv'))
        assert list(frame.columns) == CSV_HEADER
        assert len(frame) == 3 * 96
        assert read_capacities(out) == {'wf1': 49.5, 'wf2': 48.0}
        assert 'Wrote 2 farm(s)' in capsys.readouterr().out

    def test_manifest_reproduces_run(self, temp_dir):
        out = os.path.join(temp_dir, 'data')
        assert main(['synth', '--data-dir', out, '--farms', '2', '--days', '2', '--seed', '5']) == 0
        manifest = configparser.ConfigParser(interpolation=None)
        manifest.read(os.path.join(out, 'manifest.ini'))
        assert manifest.get('manifest', 'command') == 'synth'
        assert manifest.get('manifest', 'profiles') == 'wf1=WF1,wf2=WF2'
        assert manifest.get('manifest', 'version') == __version__
        assert manifest.get('data', 'synth_seed') == '5'

        again = os.path.join(temp_dir, 'again')
        assert main(['synth', '--config', os.path.join(out, 'manifest.ini'), '--data-dir', again]) == 0
        for name in ('wf1.csv', 'wf2.csv'):
            with open(os.path.join(out, name), 'rb') as a, open(os.path.join(again, name), 'rb') as b:
                assert a.read() == b.read()

    def test_deterministic(self, temp_dir):
        a = os.path.join(temp_dir, 'a')
        b = os.path.join(temp_dir, 'b')
        for out in (a, b):
            assert main(['synth', '--data-dir', out, '--farms', '1', '--days', '2', '--seed', '9']) == 0
        with open(os.path.join(a, 'wf1.csv'), 'rb') as fa, open(os.path.join(b, 'wf1.csv'), 'rb') as fb:
            assert fa.read() == fb.read()

    def test_zero_days(self, temp_dir, capsys):
        assert main(['synth', '--data-dir', temp_dir, '--days', '0']) == 1
        assert 'days' in capsys.readouterr().err


class TestIngestCheck:
    """Tests for the ingest-check command."""

    def test_valid_file(self, data_dir, capsys):
        assert main(['ingest-check', os.path.join(data_dir, 'wf1.csv')]) == 0
        out = capsys.readouterr().out
        assert 'OK' in out
        assert 'Rows: 672' in out

    def test_missing_file(self, temp_dir, capsys):
        assert main(['ingest-check', os.path.join(temp_dir, 'missing.csv'), '--capacity', '10']) == 2
        assert 'not found' in capsys.readouterr().err

    def test_no_capacity(self, data_dir):
        os.remove(os.path.join(data_dir, 'farms.ini'))
        assert main(['ingest-check', os.path.join(data_dir, 'wf1.csv')]) == 1

    def test_capacity_too_small(self, data_dir, capsys):
        assert main(['ingest-check', os.path.join(data_dir, 'wf1.csv'), '--capacity', '1']) == 2
        assert 'row' in capsys.readouterr().err


class TestRunCommands:
    """End-to-end tests for train, backtest, exp and report."""

    def test_train(self, data_dir, temp_dir):
        out = os.path.join(temp_dir, 'out')
        args = ['train', os.path.join(data_dir, 'wf1.csv'), '--out', out, '--arch', 'simo']
        assert main(args + SMALL_PLAN + QUICK_TRAIN) == 0
        assert os.path.exists(os.path.join(out, 'wf1_simo.wcm'))
        manifest = configparser.ConfigParser(interpolation=None)
        manifest.read(os.path.join(out, 'manifest.ini'))
        assert manifest.get('manifest', 'command') == 'train'
        assert manifest.get('run', 'arch') == 'SIMO'

    def test_backtest(self, data_dir, temp_dir):
        out = os.path.join(temp_dir, 'out')
        args = ['backtest', os.path.join(data_dir, 'wf1.csv'), '--out', out]
        assert main(args + SMALL_PLAN + QUICK_TRAIN) == 0
        frame = pd.read_csv(os.path.join(out, 'backtest_wf1.csv'))
        assert len(frame) == 2 * 96
        assert frame['y_blend'].notna().all()
        manifest = configparser.ConfigParser(interpolation=None)
        manifest.read(os.path.join(out, 'manifest.ini'))
        assert manifest.get('manifest', 'cycle_0').startswith('days 0-0 RR')

    def test_backtest_too_short(self, data_dir, temp_dir):
        args = ['backtest', os.path.join(data_dir, 'wf1.csv'), '--out', temp_dir]
        assert main(args + QUICK_TRAIN) == 2

    def test_exp_and_report(self, temp_dir, capsys):
        data = os.path.join(temp_dir, 'data')
        assert main(['synth', '--data-dir', data, '--farms', '2', '--days', '8']) == 0
        out = os.path.join(temp_dir, 'out')
        args = ['exp', '1', '--data-dir', data, '--out', out, '--seasons', '2', '--season-spacing', '1']
        assert main(args + SMALL_PLAN + QUICK_TRAIN) == 0
        exp_dir = os.path.join(out, 'exp1')
        assert os.path.exists(os.path.join(exp_dir, 'accuracy.csv'))
        assert 'MIMO' in capsys.readouterr().out

        assert main(['report', exp_dir]) == 0
        assert os.path.exists(os.path.join(exp_dir, 'tables', 'accuracy.txt'))
        assert os.path.exists(os.path.join(exp_dir, 'tables', 'ttests.txt'))

    def test_exp_needs_two_farms(self, data_dir, capsys):
        args = ['exp', '1', '--data-dir', data_dir, '--seasons', '2']
        assert main(args + SMALL_PLAN + QUICK_TRAIN) == 1
        assert '2 farms' in capsys.readouterr().err

    def test_exp_without_data(self, temp_dir):
        assert main(['exp', '3', '--data-dir', temp_dir]) == 2

    def test_report_missing_directory(self, temp_dir):
        assert main(['report', os.path.join(temp_dir, 'nothing')]) == 2
