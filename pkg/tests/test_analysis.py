"""
Unit tests for the spectral probe, f_max sweep and ablation harnesses.
"""

import numpy as np
import pytest

from analysis import (
    SpectralProbe, amplitude_error, amplitude_spectrum, convergence_order, fmax_sweep, is_ordered, run_ablation,
    run_spectral_probe, synth_sinusoid_image,
)
from models import HourglassConfig
from utils.error_handler import ConfigError, ShapeError

TINY = HourglassConfig(levels=2, width=8, skip_channels=2, blocks_per_level=1, in_channels=8)


def tones(height: int = 64, width: int = 4, freqs=(4, 8, 16), amps=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Unnormalized H×W sum of vertical sines."""
    y = np.arange(height) / height
    column = sum(a * np.sin(2 * np.pi * f * y) for f, a in zip(freqs, amps))
    return np.repeat(column[:, None], width, axis=1)


class TestSynthesis:
    def test_range_and_layout(self):
        image = synth_sinusoid_image(32, 16).data
        assert image.shape == (3, 32, 16)
        assert image.min() == pytest.approx(0.0) and image.max() == pytest.approx(1.0)
        assert np.ptp(image[0], axis=1).max() == 0.0

    def test_single_tone(self):
        """amps [1, 0, 0] leaves one dominant bin."""
        amp = amplitude_spectrum(synth_sinusoid_image(64, 8, amps=(1.0, 0.0, 0.0)))
        assert np.argmax(amp[1:]) + 1 == 4
        others = np.delete(amp[1:], 3)
        assert others.max() < 1e-6

    def test_amps_must_match(self):
        with pytest.raises(ConfigError, match="3 frequencies but 2 amplitudes"):
            synth_sinusoid_image(32, 32, amps=(1.0, 1.0))


class TestAmplitudeError:
    """Per-bin amplitude differences."""

    def test_zero_for_identical(self):
        gt = tones()
        np.testing.assert_allclose(amplitude_error(gt, gt), 0.0, atol=1e-12)

    def test_missing_middle_tone(self):
        """Dropping the 8-cycle tone shows up only in that bin, with its full amplitude."""
        gt = tones()
        output = tones(freqs=(4, 16), amps=(1.0, 1.0))
        np.testing.assert_allclose(amplitude_error(output, gt), [0.0, 1.0, 0.0], atol=1e-9)

    def test_zero_output(self):
        gt = tones(amps=(0.5, 1.0, 2.0))
        np.testing.assert_allclose(amplitude_error(np.zeros_like(gt), gt), [0.5, 1.0, 2.0], atol=1e-9)

    def test_ignores_tones_off_the_probe_bins(self):
        gt = tones()
        output = 0.7 * gt + tones(freqs=(5,), amps=(0.3,))
        base = amplitude_error(0.7 * gt, gt)
        np.testing.assert_allclose(amplitude_error(output, gt), base, atol=1e-9)

    def test_probe_beyond_nyquist(self):
        gt = tones(height=16)
        with pytest.raises(ConfigError, match="Nyquist"):
            amplitude_error(gt, gt, probe_freqs=(4, 9))


class TestConvergenceOrder:
    """Threshold crossings of a probe table."""

    @pytest.fixture
    def probe(self):
        probe = SpectralProbe(probe_freqs=[4, 8, 16])
        rows = [(1, [1.0, 1.0, 1.0]), (5, [0.5, 0.9, 1.0]), (10, [0.1, 0.5, 0.9]), (15, [0.05, 0.1, 0.8])]
        for iteration, errors in rows:
            probe.add_row(iteration, errors)
        return probe

    def test_known_crossings(self, probe):
        assert convergence_order(probe, threshold=0.2) == [10, 15, None]

    def test_ordering(self, probe):
        assert not is_ordered(convergence_order(probe))
        assert is_ordered([10, 40, 90])
        assert not is_ordered([10, 10, 20])

    def test_empty_probe(self):
        assert convergence_order(SpectralProbe(probe_freqs=[4, 8])) == [None, None]

    def test_frame_and_row_checks(self, probe):
        frame = probe.to_frame()
        assert list(frame.columns) == ["iteration", "err_f1", "err_f2", "err_f3"]
        assert frame["iteration"].tolist() == [1, 5, 10, 15]
        with pytest.raises(ShapeError):
            probe.add_row(20, [0.1, 0.1])


class TestHarnesses:
    """Short runs of the probe, sweep and ablation."""

    def test_spectral_probe_sampling(self):
        probe, result, gt = run_spectral_probe(size=16, freqs=(1, 2, 4), iterations=10, sample_every=5,
                                               model_config=TINY, m=2)
        assert probe.iterations == [1, 5, 10]
        assert probe.table.shape == (3, 3)
        assert gt.shape == (3, 16, 16)
        assert result.executed_iterations == 10

    def test_fmax_sweep(self, rng):
        clean = rng.random((3, 16, 16)).astype(np.float32)
        table, images = fmax_sweep(clean, exponents=(2, 4), iterations=3, model_config=TINY, m=2)
        assert table["f_max"].tolist() == [4.0, 16.0]
        assert table["log2_f_max"].tolist() == [2, 4]
        assert {"psnr", "best_psnr", "noisy_psnr"} <= set(table.columns)
        assert set(images) == {4.0, 16.0}

    def test_ablation(self, rng):
        clean = rng.random((3, 16, 16)).astype(np.float32)
        table, images = run_ablation(clean, architectures=("pip", "mlp"), inputs=("ff", "noise"),
                                     iterations=2, model_config=TINY, m=2, f_max=8.0)
        assert len(table) == 4
        assert set(images) == {"pip/ff", "pip/noise", "mlp/ff", "mlp/noise"}
        assert images["mlp/noise"].shape == (3, 16, 16)

    def test_ablation_rejects_unknown_options(self, rng):
        with pytest.raises(ConfigError, match="unknown ablation option"):
            run_ablation(rng.random((3, 16, 16)), architectures=("resnet",), iterations=1)
