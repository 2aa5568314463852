"""
Tests for the pip-restore command line: argument mapping, stdout reports and exit codes.
"""

import numpy as np
import pytest
from PIL import Image

from main import build_parser, collect_overrides, main
from utils.error_handler import NumericalError
from utils.logger import setup_logging

TINY_FLAGS = ["--levels", "2", "--width", "8", "--m", "2", "--f-max", "8", "--iterations", "2"]


@pytest.fixture(autouse=True)
def isolated(monkeypatch, tmp_path):
    """Fresh working directory without .env, no PIP_* variables, quiet logging afterwards."""
    for variable in ("PIP_LOG_LEVEL", "PIP_OUTPUT_ROOT", "PIP_JOBS", "PIP_SNAPSHOT_EVERY"):
        monkeypatch.delenv(variable, raising=False)
    monkeypatch.chdir(tmp_path)
    yield
    setup_logging("WARNING")


@pytest.fixture
def gt_png(tmp_path, rng):
    path = tmp_path / "gt.png"
    Image.fromarray(rng.integers(0, 256, (8, 8, 3), dtype=np.uint8), mode="RGB").save(path)
    return str(path)


def run(*argv):
    return main(["--log-level", "WARNING", "--output-root", "runs", *argv])


class TestArguments:
    def test_overrides_from_flags(self):
        args = build_parser().parse_args(["sr", "--factor", "8", "--lr", "0.02", "--seed", "3", "--iterations", "auto"])
        assert collect_overrides(args) == {
            "run": {"command": "sr", "seed": 3},
            "task": {"sr_factor": 8},
            "train": {"lr": 0.02, "iterations": "auto"},
        }

    def test_lists_are_comma_separated(self):
        args = build_parser().parse_args(["spectral-bias", "--freqs", "4", "8", "16"])
        assert collect_overrides(args)["analysis"] == {"probe_freqs": "4,8,16"}

    def test_switches(self):
        args = build_parser().parse_args(["denoise", "--trainable-freqs", "--save-checkpoint"])
        layer = collect_overrides(args)
        assert layer["encoding"] == {"trainable": True}
        assert layer["io"] == {"save_checkpoint": True}

    def test_parse_errors_exit_2(self, capsys):
        assert main(["sharpen"]) == 2
        assert main(["sr", "--factor", "3"]) == 2
        assert "invalid choice" in capsys.readouterr().err


class TestCommands:
    """Whole invocations."""

    def test_count_params(self, capsys, tmp_path):
        assert run("count-params") == 0
        out = capsys.readouterr().out
        assert "params: 326,059 (0.33M), layers: 26" in out
        assert "outputs: runs" in out
        assert len(list((tmp_path / "runs").iterdir())) == 1

    def test_denoise(self, capsys, gt_png):
        assert run("denoise", "--gt", gt_png, "--seed", "2", *TINY_FLAGS) == 0
        out = capsys.readouterr().out
        assert '"executed_iterations": 2' in out
        assert "denoise-" in out and "-seed2" in out

    def test_prop1_check(self, capsys):
        assert run("prop1-check", "--n", "16", "--trials", "2") == 0
        out = capsys.readouterr().out
        assert "N=  16 r=  16 trials=2" in out
        assert out.splitlines()[-2] == "PASS"

    def test_config_file_and_flag_precedence(self, capsys, tmp_path):
        config = tmp_path / "dump.cfg"
        config.write_text("[encoding]\nm = 4\n[analysis]\nsize = 8\n", encoding="utf-8")
        assert run("encode-dump", "--config", str(config), "--m", "2") == 0
        assert '"channels": 8' in capsys.readouterr().out


class TestExitCodes:
    def test_configuration_error(self, capsys, tmp_path):
        config = tmp_path / "bad.cfg"
        config.write_text("[train]\ncolour = red\n", encoding="utf-8")
        assert run("denoise", "--config", str(config)) == 2
        err = capsys.readouterr().err
        assert "pip-restore: error: Configuration error: unknown key(s) in section [train]: colour" in err
        assert "Remove or rename" in err

    def test_missing_input(self, capsys):
        assert run("denoise", "--in", "absent.png", *TINY_FLAGS) == 2
        assert "File not found" in capsys.readouterr().err

    def test_numerical_abort(self, capsys, gt_png, mocker):
        mocker.patch("run_manager.train", side_effect=NumericalError("non-finite loss nan at iteration 7 (lr=0.01)"))
        assert run("denoise", "--gt", gt_png, *TINY_FLAGS) == 3
        assert "Numerical abort: non-finite loss" in capsys.readouterr().err

    def test_unexpected_error(self, capsys, gt_png, mocker):
        mocker.patch("run_manager.train", side_effect=RuntimeError("boom"))
        assert run("denoise", "--gt", gt_png, *TINY_FLAGS) == 1
        assert "Unexpected error: boom" in capsys.readouterr().err

    def test_interrupt(self, gt_png, mocker):
        mocker.patch("run_manager.train", side_effect=KeyboardInterrupt)
        assert run("denoise", "--gt", gt_png, *TINY_FLAGS) == 130

    def test_bad_application_setting(self, capsys):
        assert main(["--jobs", "0", "count-params"]) == 2
        assert "jobs must be >= 1" in capsys.readouterr().err

    def test_batch_reports_worst_code(self, capsys, tmp_path):
        good = tmp_path / "good.cfg"
        good.write_text("[run]\ncommand = encode-dump\n[analysis]\nsize = 8\n", encoding="utf-8")
        bad = tmp_path / "bad.cfg"
        bad.write_text("[run]\ncommand = denoise\n[io]\ninput = absent.png\n", encoding="utf-8")
        assert run("batch", str(good), str(bad)) == 2
        assert "good.cfg" in capsys.readouterr().out
