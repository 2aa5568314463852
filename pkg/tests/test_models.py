"""
Unit tests for core data models and validation.
"""

from typing import List, Optional, Tuple

import numpy as np
import pytest

from models import (
    ActivationKind, DownsamplerKind, EncodingKind, EncodingSpec, FrameSequence, HourglassConfig, MLPConfig,
    NoiseKind, NoiseSpec, RunResult, StopRule, TaskKind, TaskSpec, TrainConfig, coerce_value,
    create_denoise_task, create_inpaint_task, create_sr_task, default_iterations, format_value, from_dict, to_dict,
)
from utils.error_handler import ConfigError, DataError, ShapeError


def make_result(iterations: int = 4, stop: int = 4, with_gt: bool = True) -> RunResult:
    image = np.zeros((3, 2, 2), dtype=np.float32)
    return RunResult(
        output=image, ema_output=image, restored=image,
        loss_curve=[0.4, 0.3, 0.2, 0.1][:iterations],
        psnr_curve=[20.0, 22.0, 21.0, 19.0][:iterations] if with_gt else [],
        ema_psnr_curve=[20.0, 21.0, 23.0, 22.0][:iterations] if with_gt else [],
        stop_iteration=stop, executed_iterations=iterations, iterations=iterations,
    )


class TestTaskSpec:
    """Test cases for task descriptions."""

    def test_gaussian_noise_scale(self):
        """sigma is given on the 0-255 scale and stored in [0, 1] units."""
        spec = create_denoise_task(25)
        assert spec.kind is TaskKind.DENOISE
        assert spec.noise.kind is NoiseKind.GAUSSIAN
        assert spec.noise.sigma == pytest.approx(25 / 255)

    def test_poisson_task(self):
        spec = create_denoise_task(poisson_peak=30)
        assert spec.noise.kind is NoiseKind.POISSON
        assert spec.noise.peak == 30

    def test_sr_defaults_to_bicubic(self):
        spec = TaskSpec(kind=TaskKind.SR, sr_factor=4)
        assert spec.downsampler is DownsamplerKind.BICUBIC
        assert spec.target_spatial_shape((3, 16, 12)) == (64, 48)

    def test_sr_rejects_factor_3(self):
        with pytest.raises(ConfigError, match="sr_factor must be 2, 4 or 8"):
            create_sr_task(3)

    def test_noise_only_for_denoising(self):
        with pytest.raises(ConfigError, match="noise does not apply"):
            TaskSpec(kind=TaskKind.SR, sr_factor=2, noise=NoiseSpec.gaussian(10))

    def test_inpaint_mask_validation(self):
        """Masks must be binary 2-D arrays with at least one known pixel."""
        with pytest.raises(ConfigError, match="need a mask"):
            TaskSpec(kind=TaskKind.INPAINT)
        with pytest.raises(ShapeError, match="H×W"):
            create_inpaint_task(np.ones((1, 4, 4)))
        with pytest.raises(ConfigError, match="binary"):
            create_inpaint_task(np.full((4, 4), 0.5))
        with pytest.raises(ConfigError, match="no known pixels"):
            create_inpaint_task(np.zeros((4, 4)))

    def test_check_observed(self):
        spec = create_inpaint_task(np.ones((4, 4)))
        with pytest.raises(ShapeError, match="mask shape"):
            spec.check_observed((3, 5, 5))
        with pytest.raises(ShapeError, match="4-D observation"):
            create_denoise_task(25, video=True).check_observed((3, 8, 8))

    @pytest.mark.parametrize("spec,expected", [
        (create_denoise_task(25), 1800),
        (create_denoise_task(10), 3000),
        (create_denoise_task(poisson_peak=30), 3000),
        (create_sr_task(4), 2000),
        (create_sr_task(8), 4000),
        (create_inpaint_task(np.ones((2, 2))), 8000),
        (create_denoise_task(25, video=True), 5000),
    ])
    def test_default_iterations(self, spec, expected):
        assert default_iterations(spec) == expected


class TestConfigDataclasses:
    """Validation of encoding, model and training configs."""

    def test_hourglass_defaults(self):
        config = HourglassConfig()
        assert (config.levels, config.width, config.skip_channels, config.kernel) == (5, 128, 4, 1)

    @pytest.mark.parametrize("kwargs,message", [
        ({"kernel": 5}, "kernel must be 1 or 3"),
        ({"width": 2, "skip_channels": 4}, "width >= skip_channels"),
        ({"levels": 0}, "levels must be >= 1"),
        ({"in_channels": 0}, "in_channels must be positive"),
    ])
    def test_hourglass_validation(self, kwargs, message):
        with pytest.raises(ConfigError, match=message):
            HourglassConfig(**kwargs)

    def test_mlp_validation(self):
        with pytest.raises(ConfigError, match="width must be positive"):
            MLPConfig(width=0)

    def test_train_validation(self):
        with pytest.raises(ConfigError, match="ema_decay"):
            TrainConfig(ema_decay=1.0)
        with pytest.raises(ConfigError, match="iterations must be >= 1"):
            TrainConfig(iterations=0)

    def test_encoding_channel_count(self):
        assert EncodingSpec(m=8).channel_count() == 32
        assert EncodingSpec(m=8, m_temporal=4).channel_count(video=True) == 40
        assert EncodingSpec(kind=EncodingKind.MESHGRID).channel_count() == 2


class TestValueConversion:
    """String coercion used by run files."""

    @pytest.mark.parametrize("tp,raw,expected", [
        (int, "12", 12),
        (float, "0.5", 0.5),
        (bool, "yes", True),
        (bool, "false", False),
        (StopRule, "EMV", StopRule.EMV),
        (ActivationKind, "leaky-relu", ActivationKind.LEAKY_RELU),
        (Optional[float], "", None),
        (Tuple[int, ...], "4,8,16", (4, 8, 16)),
        (List[float], "1.5, 2", [1.5, 2.0]),
    ])
    def test_coerce_value(self, tp, raw, expected):
        assert coerce_value(tp, raw) == expected

    @pytest.mark.parametrize("tp,raw", [(int, "1.5"), (bool, "maybe"), (StopRule, "never"), (int, "")])
    def test_coerce_rejects(self, tp, raw):
        with pytest.raises(ConfigError):
            coerce_value(tp, raw, "field")

    def test_format_value_round_trip(self):
        """format_value writes what coerce_value reads back."""
        assert format_value(StopRule.WMV) == "wmv"
        assert format_value(True) == "true"
        assert format_value(None) == ""
        assert coerce_value(Tuple[int, ...], format_value((2, 4))) == (2, 4)
        assert coerce_value(float, format_value(0.1)) == 0.1

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigError, match=r"unknown key\(s\) in section \[train\]: colour"):
            from_dict(TrainConfig, {"iterations": "10", "colour": "blue"}, "train")

    def test_from_dict_and_to_dict(self):
        config = from_dict(TrainConfig, {"iterations": "10", "stop_rule": "wmv"}, "train")
        assert config.iterations == 10 and config.stop_rule is StopRule.WMV
        assert to_dict(config)["stop_rule"] == "wmv"


class TestRunResult:
    """Result invariants and summaries."""

    def test_properties(self):
        result = make_result()
        assert result.final_psnr == 22.0
        assert result.best_psnr == 23.0
        assert result.best_iteration == 3

    def test_metrics_keys(self):
        """metrics carry the contract keys and no wall clock."""
        metrics = make_result().to_metrics()
        assert {"final_psnr", "best_psnr", "stop_iter"} <= set(metrics)
        assert "wall_clock" not in metrics
        assert metrics["stop_iter"] == 4

    def test_curves_frame(self):
        frame = make_result().curves_frame()
        assert list(frame.columns) == ["iteration", "loss", "psnr", "ema_psnr"]
        assert list(make_result(with_gt=False).curves_frame().columns) == ["iteration", "loss"]

    def test_stop_iteration_bounds(self):
        with pytest.raises(DataError, match="outside 1..4"):
            make_result(stop=5)

    def test_curve_length_mismatch(self):
        with pytest.raises(DataError, match="loss curve length"):
            RunResult(output=np.zeros(1), ema_output=np.zeros(1), restored=np.zeros(1), loss_curve=[1.0],
                      psnr_curve=[], ema_psnr_curve=[], stop_iteration=1, executed_iterations=2, iterations=2)


class TestFrameSequence:
    """Frame sequences share one shape."""

    def test_to_array_layout(self):
        frames = [np.full((3, 2, 2), t, dtype=np.float32) for t in range(5)]
        video = FrameSequence(frames).to_array()
        assert video.shape == (3, 5, 2, 2)
        assert video[0, 4, 0, 0] == 4
        assert len(FrameSequence.from_array(video)) == 5

    def test_mixed_sizes_name_the_frame(self):
        frames = [np.zeros((3, 4, 4)), np.zeros((3, 4, 5))]
        with pytest.raises(DataError, match="b.png"):
            FrameSequence(frames, names=["a.png", "b.png"])

    def test_empty(self):
        with pytest.raises(DataError, match="empty"):
            FrameSequence([])
