"""Tests for the command-line interface."""

import json

import pytest

from src.cli import build_parser, main

SMALL_CONFIG = """
dim: 1
extents: [1.0]
N: 129
M: 16
eps_list: ["1/8", "1/16"]
coefficient: {kind: catalog, id: cosine1d, base: 2.0, amp: 1.0}
source: {kind: constant, value: 1.0}
workers: 1
"""

CONSTANT_CONFIG = """
dim: 1
extents: [1.0]
N: 129
M: 16
eps_list: ["1/8", "1/16"]
coefficient: {kind: catalog, id: constant, value: 2.0}
source: {kind: constant, value: 1.0}
workers: 1
"""


@pytest.fixture
def config_file(tmp_path):
    """Write the small cosine config."""
    path = tmp_path / 'config.yaml'
    path.write_text(SMALL_CONFIG, encoding='utf-8')
    return path


class TestParser:
    """Test cases for argument parsing."""

    def test_subcommands(self):
        """Test that each subcommand parses."""
        parser = build_parser()

        assert parser.parse_args(['cell', '--config', 'c.yaml']).command == 'cell'
        assert parser.parse_args(['solve', '--config', 'c.yaml', '--eps', '1/8']).eps == '1/8'
        assert parser.parse_args(['sweep', '--config', 'c.yaml', '--format', 'json']).format == 'json'
        assert parser.parse_args(['--log-level', 'DEBUG', 'verify', '--config', 'c.yaml']).log_level == 'DEBUG'

    def test_command_required(self):
        """Test that a subcommand is required."""
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestMain:
    """Test cases for the subcommand handlers."""

    def test_cell(self, config_file, tmp_path, capsys):
        """Test that cell prints a_hom and writes a summary."""
        out = tmp_path / 'cell.json'

        assert main(['cell', '--config', str(config_file), '--out', str(out)]) == 0

        assert 'a_hom = ' in capsys.readouterr().out
        assert json.loads(out.read_text(encoding='utf-8'))['a_hom'][0][0] == pytest.approx(3 ** 0.5, abs=1e-3)

    def test_solve(self, config_file, capsys):
        """Test that solve prints the per-eps metrics."""
        assert main(['solve', '--config', str(config_file), '--eps', '1/8']) == 0

        printed = capsys.readouterr().out
        assert 'h1_gap = ' in printed
        assert 'stability_bound = ' in printed

    def test_sweep_writes_csv(self, config_file, tmp_path, capsys):
        """Test that sweep writes one line per eps plus the header."""
        out = tmp_path / 'sweep.csv'

        assert main(['sweep', '--config', str(config_file), '--out', str(out)]) == 0

        lines = out.read_text(encoding='utf-8').splitlines()
        assert lines[0].startswith('eps,h1_gap')
        assert len(lines) == 3
        assert 'Sweep Summary' in capsys.readouterr().out

    def test_verify_constant_coefficient(self, tmp_path, capsys):
        """Test that verify passes and prints each check."""
        path = tmp_path / 'constant.yaml'
        path.write_text(CONSTANT_CONFIG, encoding='utf-8')

        assert main(['verify', '--config', str(path)]) == 0

        assert '[PASS] shift_isometry' in capsys.readouterr().out

    def test_bad_config_returns_error(self, tmp_path):
        """Test that an invalid config exits with 1."""
        path = tmp_path / 'bad.yaml'
        path.write_text(SMALL_CONFIG.replace('["1/8", "1/16"]', '["1/7"]'), encoding='utf-8')

        assert main(['cell', '--config', str(path)]) == 1

    def test_missing_config_returns_error(self, tmp_path):
        """Test that a missing file exits with 1."""
        assert main(['sweep', '--config', str(tmp_path / 'absent.yaml')]) == 1
