"""
Unit tests for degradations, resampling operators and task losses.
"""

import numpy as np
import pytest

from models import DownsamplerKind, NoiseSpec, TaskKind, TaskSpec, create_denoise_task, create_inpaint_task, create_sr_task
from tasks import (
    box_matrix, cubic_matrix, degrade, downsample, random_mask, task_loss, upscale_bicubic, upscale_bilinear,
)
from tensor import Tensor
from utils.error_handler import ShapeError


def mid_gray(size: int = 64) -> np.ndarray:
    return np.full((3, size, size), 0.5, dtype=np.float32)


class TestDegrade:
    """Forward models for every task."""

    def test_zero_sigma_is_identity(self, rng):
        clean = rng.random((3, 8, 8)).astype(np.float32)
        spec = TaskSpec(kind=TaskKind.DENOISE, noise=NoiseSpec.gaussian(0))
        np.testing.assert_array_equal(degrade(clean, spec).data, clean)

    def test_gaussian_noise_level(self):
        """sigma 25 on mid-gray sits at 20·log10(255/25) dB."""
        noisy = degrade(mid_gray(), create_denoise_task(25), seed=1).data
        psnr = 10 * np.log10(1.0 / np.mean((noisy - 0.5) ** 2))
        assert psnr == pytest.approx(20 * np.log10(255 / 25), abs=0.3)

    def test_same_seed_same_noise(self):
        a = degrade(mid_gray(16), create_denoise_task(25), seed=7).data
        b = degrade(mid_gray(16), create_denoise_task(25), seed=7).data
        c = degrade(mid_gray(16), create_denoise_task(25), seed=8).data
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_output_is_clipped(self, rng):
        noisy = degrade(rng.random((3, 16, 16)), create_denoise_task(100), seed=0).data
        assert noisy.min() >= 0.0 and noisy.max() <= 1.0

    def test_poisson_counts(self):
        """Scaled Poisson observations are multiples of 1/peak."""
        noisy = degrade(mid_gray(16), create_denoise_task(poisson_peak=10), seed=0).data
        counts = noisy * 10
        np.testing.assert_allclose(counts, np.round(counts), atol=1e-5)
        assert noisy.mean() == pytest.approx(0.5, abs=0.05)

    def test_sr_observation_shape(self, rng):
        observed = degrade(rng.random((3, 16, 16)), create_sr_task(4))
        assert observed.shape == (3, 4, 4)

    def test_inpaint_zeroes_missing_pixels(self, rng):
        mask = np.ones((4, 4))
        mask[1, 2] = 0
        observed = degrade(rng.random((3, 4, 4)) + 0.1, create_inpaint_task(mask)).data
        np.testing.assert_array_equal(observed[:, 1, 2], 0.0)
        assert np.count_nonzero(observed == 0) == 3

    def test_video_noise(self, rng):
        video = rng.random((3, 4, 8, 8))
        assert degrade(video, create_denoise_task(25, video=True), seed=0).shape == (3, 4, 8, 8)

    def test_shape_is_checked(self, rng):
        with pytest.raises(ShapeError, match="4-D observation"):
            degrade(rng.random((3, 8, 8)), create_denoise_task(25, video=True))


class TestResampling:
    """Downsampling kernels and upscaling baselines."""

    @pytest.mark.parametrize("kernel", list(DownsamplerKind))
    def test_constant_stays_constant(self, kernel):
        out = downsample(np.full((3, 16, 16), 0.3, dtype=np.float32), 4, kernel)
        assert out.shape == (3, 4, 4)
        np.testing.assert_allclose(out.data, 0.3, atol=1e-6)

    def test_factor_4_shape(self, rng):
        assert downsample(rng.random((3, 256, 256)), 4, "bicubic").shape == (3, 64, 64)

    def test_box_is_blockwise_mean(self, rng):
        image = rng.random((2, 4, 6))
        out = downsample(image, 2, "box").data
        expected = image.reshape(2, 2, 2, 3, 2).mean(axis=(2, 4))
        np.testing.assert_allclose(out, expected, rtol=1e-6)

    def test_indivisible_size(self, rng):
        with pytest.raises(ShapeError, match="not divisible by factor 4"):
            downsample(rng.random((3, 10, 8)), 4)

    def test_matrices_are_normalized(self):
        np.testing.assert_allclose(cubic_matrix(32, 8).sum(axis=1), 1.0)
        np.testing.assert_allclose(cubic_matrix(8, 32).sum(axis=1), 1.0)
        np.testing.assert_allclose(box_matrix(8, 4).sum(axis=1), 1.0)
        assert box_matrix(8, 4).shape == (2, 8)

    def test_upscaling_baselines(self, rng):
        small = rng.random((3, 4, 4)).astype(np.float32)
        for up in (upscale_bicubic(small, 4), upscale_bilinear(small, 4)):
            assert up.shape == (3, 16, 16)
            assert up.min() >= 0.0 and up.max() <= 1.0


class TestTaskLoss:
    """Data terms of every task."""

    def test_denoise_zero_at_observation(self, rng):
        observed = rng.random((3, 8, 8)).astype(np.float32)
        assert task_loss(Tensor(observed), observed, create_denoise_task(25)).item() == 0.0

    def test_full_mask_equals_mse(self, rng):
        output, observed = rng.random((3, 4, 4)), rng.random((3, 4, 4)).astype(np.float32)
        loss = task_loss(Tensor(output), observed, create_inpaint_task(np.ones((4, 4))))
        assert loss.item() == pytest.approx(np.mean((output - observed) ** 2), rel=1e-6)

    def test_masked_pixels_are_ignored(self, rng):
        """Changing output under the hole leaves the loss bit-identical."""
        mask = random_mask(8, 8, 0.5, seed=2)
        spec = create_inpaint_task(mask)
        output, observed = rng.random((3, 8, 8)), rng.random((3, 8, 8))
        perturbed = output + (1 - mask)[None] * rng.standard_normal((3, 8, 8))
        assert task_loss(Tensor(output), observed, spec).item() == task_loss(Tensor(perturbed), observed, spec).item()

    def test_sr_box_null_space(self, rng):
        """A zero-mean change inside one box block does not move the sr loss."""
        spec = create_sr_task(2, DownsamplerKind.BOX)
        output, observed = rng.random((3, 8, 8)), rng.random((3, 4, 4))
        perturbed = output.copy()
        perturbed[:, 0, 0] += 0.1
        perturbed[:, 1, 1] -= 0.1
        base = task_loss(Tensor(output), observed, spec).item()
        assert task_loss(Tensor(perturbed), observed, spec).item() == pytest.approx(base, rel=1e-9)

    def test_sr_round_trip(self, rng):
        """Loss of the bicubic upscale equals its downsample-then-compare error."""
        spec = create_sr_task(4)
        observed = rng.random((3, 4, 4)).astype(np.float32)
        upscaled = upscale_bicubic(observed, 4).astype(np.float64)
        down = cubic_matrix(16, 4)
        oracle = np.mean((np.einsum("hi,cij,wj->chw", down, upscaled, down) - observed) ** 2)
        assert task_loss(Tensor(upscaled), observed, spec).item() == pytest.approx(oracle, rel=1e-9)

    def test_video_mean_of_frames(self, rng):
        output, observed = rng.random((3, 2, 4, 4)), rng.random((3, 2, 4, 4)).astype(np.float32)
        frames = [Tensor(output[:, t]) for t in range(2)]
        expected = np.mean([np.mean((output[:, t] - observed[:, t]) ** 2) for t in range(2)])
        assert task_loss(frames, observed, create_denoise_task(25, video=True)).item() == pytest.approx(expected)

    def test_video_frame_count_mismatch(self, rng):
        with pytest.raises(ShapeError, match="does not match"):
            task_loss([Tensor(rng.random((3, 4, 4)))], rng.random((3, 2, 4, 4)), create_denoise_task(25, video=True))


class TestRandomMask:
    def test_fraction_and_blocks(self):
        mask = random_mask(64, 64, 0.5, seed=0, block=4)
        assert mask.shape == (64, 64)
        assert 0.35 < 1 - mask.mean() < 0.65
        blocks = mask.reshape(16, 4, 16, 4)
        assert np.all(blocks.min(axis=(1, 3)) == blocks.max(axis=(1, 3)))

    def test_never_empty(self):
        assert random_mask(2, 2, 0.999, seed=0).sum() >= 1

    def test_rejects_bad_fraction(self):
        with pytest.raises(ValueError, match="missing_fraction"):
            random_mask(4, 4, 1.0)
