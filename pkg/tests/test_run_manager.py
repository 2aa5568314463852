"""
Tests for run directories, command execution and batch mode.

Restoration commands run with a two-level, width-8 hourglass on 8x8 images
for a handful of iterations, so these exercise the plumbing rather than
restoration quality.
"""

from datetime import datetime

import numpy as np
import pandas as pd
import pytest
from PIL import Image

from config import AppConfig, RunConfig
from export_manager import read_metrics
from image_io import load_png
from run_manager import RunManager, run_batch
from utils.error_handler import ConfigError, ErrorHandler
from utils.logger import get_logger

TINY = {
    "model": {"levels": 2, "width": 8, "blocks_per_level": 1, "skip_channels": 2},
    "encoding": {"m": 2, "f_max": 8},
    "train": {"iterations": 3},
}


def tiny(command, preset=None, **sections):
    layer = {name: dict(values) for name, values in TINY.items()}
    layer["run"] = {"command": command}
    for name, values in sections.items():
        layer.setdefault(name, {}).update(values)
    return RunConfig.build(preset=preset, overrides=layer)


def write_png(path, rng, size=8):
    Image.fromarray(rng.integers(0, 256, (size, size, 3), dtype=np.uint8), mode="RGB").save(path)
    return str(path)


@pytest.fixture
def manager(tmp_path):
    config = AppConfig(use_env=False)
    config.output_root = tmp_path / "runs"
    return RunManager(config, ErrorHandler(get_logger("tests")))


@pytest.fixture
def gt_png(tmp_path, rng):
    return write_png(tmp_path / "gt.png", rng)


class TestRunDirectories:
    def test_name_and_clash_suffix(self, manager):
        run_config = tiny("denoise", run={"seed": 4})
        now = datetime(2026, 1, 2, 3, 4, 5)
        first = manager.create_run_dir(run_config, now)
        second = manager.create_run_dir(run_config, now)
        assert first.name == "denoise-20260102-030405-seed4"
        assert second.name == "denoise-20260102-030405-seed4-1"

    def test_per_run_output_root(self, manager, tmp_path):
        run_config = tiny("denoise", io={"output_root": str(tmp_path / "elsewhere")})
        assert manager.create_run_dir(run_config).parent == tmp_path / "elsewhere"


class TestRestorationCommands:
    """End-to-end runs of the four restoration commands."""

    def test_denoise_from_ground_truth(self, manager, gt_png):
        record = manager.execute(tiny("denoise", io={"gt": gt_png}))
        run_dir = record.run_dir
        for name in ("run.cfg", "run.log", "metrics.json", "curves.csv", "restored.png", "observed.png"):
            assert (run_dir / name).exists(), name
        metrics = read_metrics(run_dir / "metrics.json")
        assert metrics["command"] == "denoise"
        assert metrics["executed_iterations"] == 3
        assert metrics["noisy_psnr"] is not None
        assert len(pd.read_csv(run_dir / "curves.csv")) == 3
        assert RunConfig.load(run_dir / "run.cfg").train.iterations == 3

    def test_auto_budget_is_resolved_in_run_cfg(self, manager, gt_png, mocker):
        train = mocker.patch("run_manager.train", side_effect=ConfigError("stop here"))
        run_config = tiny("denoise", io={"gt": gt_png}, train={"iterations": "auto"})
        with pytest.raises(ConfigError, match="stop here"):
            manager.execute(run_config)
        assert train.call_args.args[4].iterations == 1800
        run_dir = next((manager.config.output_root).iterdir())
        assert RunConfig.load(run_dir / "run.cfg").train.iterations == 1800

    def test_metrics_are_reproducible(self, manager, gt_png):
        first = manager.execute(tiny("denoise", io={"gt": gt_png}, run={"seed": 5}))
        second = manager.execute(tiny("denoise", io={"gt": gt_png}, run={"seed": 5}))
        assert first.run_dir != second.run_dir
        assert (first.run_dir / "metrics.json").read_bytes() == (second.run_dir / "metrics.json").read_bytes()

    def test_denoise_needs_an_image(self, manager):
        with pytest.raises(ConfigError, match="needs an input image"):
            manager.execute(tiny("denoise"))

    def test_sr(self, manager, gt_png):
        record = manager.execute(tiny("sr", io={"gt": gt_png}, task={"sr_factor": 2}))
        assert load_png(record.run_dir / "observed.png").shape == (3, 4, 4)
        assert load_png(record.run_dir / "restored.png").shape == (3, 8, 8)
        assert record.metrics["bicubic_psnr"] is not None

    def test_inpaint_with_random_mask(self, manager, gt_png):
        record = manager.execute(tiny("inpaint", io={"gt": gt_png}, task={"mask_fraction": 0.5}))
        assert (record.run_dir / "mask.png").exists()
        assert 0.0 < record.metrics["known_fraction"] < 1.0

    @pytest.mark.parametrize("mode", ["3d", "2d"])
    def test_video(self, manager, tmp_path, rng, mode):
        frames = tmp_path / "frames"
        frames.mkdir()
        for t in range(2):
            write_png(frames / f"f{t}.png", rng)
        record = manager.execute(tiny("video-denoise", io={"gt": str(frames)}, task={"video_mode": mode}))
        assert sorted(p.name for p in (record.run_dir / "restored").iterdir()) == ["frame_0000.png", "frame_0001.png"]
        assert record.metrics["frames"] == 2
        assert record.metrics["video_mode"] == mode
        assert record.metrics["ssim3d"] is not None


class TestAnalysisCommands:
    def test_count_params(self, manager):
        record = manager.execute(RunConfig.build(overrides={"run": {"command": "count-params"}}))
        assert record.metrics["params"] == 326_059
        assert record.metrics["params_m"] == 0.33
        assert record.metrics["layers"] == 26
        assert not (record.run_dir / "restored.png").exists()
        layers = pd.read_csv(record.run_dir / "layers.csv")
        assert layers["params"].sum() == 326_059

    def test_prop1_check(self, manager):
        record = manager.execute(tiny("prop1-check", analysis={"sizes": "16", "trials": 2}))
        assert record.passed
        assert record.metrics["trials"] == 2
        assert len(pd.read_csv(record.run_dir / "prop1.csv")) == 2
        assert (record.run_dir / "prop1_summary.csv").exists()

    def test_encode_dump(self, manager):
        record = manager.execute(tiny("encode-dump", analysis={"size": 16}))
        assert record.metrics["channels"] == 8
        assert len(pd.read_csv(record.run_dir / "channels.csv")) == 8
        assert (record.run_dir / "contact_sheet.png").exists()

    def test_spectral_bias(self, manager):
        record = manager.execute(tiny("spectral-bias", analysis={
            "size": 16, "probe_freqs": "1,2,4", "probe_iterations": 10, "sample_every": 5,
        }))
        assert len(pd.read_csv(record.run_dir / "probe.csv")) == 3
        assert len(record.metrics["crossings"]) == 3

    def test_fmax_sweep(self, manager, gt_png):
        record = manager.execute(tiny("fmax-sweep", io={"gt": gt_png}, analysis={"exponents": "2,3"}))
        assert pd.read_csv(record.run_dir / "sweep.csv")["log2_f_max"].tolist() == [2, 3]
        assert (record.run_dir / "restored_fmax_2e3.png").exists()

    def test_sweeps_reject_flat_mlp(self, manager, gt_png):
        with pytest.raises(ConfigError, match="flat MLP"):
            manager.execute(tiny("ablation", preset="flat-mlp", io={"gt": gt_png}))

    def test_statistics(self, manager):
        assert manager.get_run_statistics() == {"message": "No runs executed yet"}
        manager.execute(tiny("encode-dump", analysis={"size": 8}))
        stats = manager.get_run_statistics()
        assert stats["total_runs"] == stats["passed_runs"] == 1
        assert stats["command_breakdown"] == {"encode-dump": 1}


class TestBatch:
    def test_exit_code_per_file(self, tmp_path):
        good = tmp_path / "good.cfg"
        good.write_text("[run]\ncommand = encode-dump\n[analysis]\nsize = 8\n[encoding]\nm = 2\n", encoding="utf-8")
        bad = tmp_path / "bad.cfg"
        bad.write_text("[train]\ncolour = red\n", encoding="utf-8")
        app_config = AppConfig(use_env=False)
        app_config.output_root = tmp_path / "runs"
        table = run_batch([good, bad], app_config)
        assert table["exit_code"].tolist() == [0, 2]
        assert table.loc[0, "run_dir"].startswith(str(tmp_path / "runs"))
        assert table.loc[1, "message"].startswith("Configuration error")
