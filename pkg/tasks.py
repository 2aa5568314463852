"""
Degradations and task losses for the PIP Restoration Toolkit

Forward models for every restoration task: additive Gaussian or scaled
Poisson noise, anti-aliased decimation for super-resolution, and hole masks
for inpainting. ``task_loss`` compares a network output with the observation
through the same forward model.
"""

from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from models import DownsamplerKind, NoiseKind, TaskKind, TaskSpec, coerce_value
from tensor import Tensor, masked_mse_loss, mse_loss, resample, upsample
from utils.error_handler import ShapeError
from utils.logger import get_logger

logger = get_logger(__name__)

CUBIC_A = -0.5

ImageLike = Union[Tensor, np.ndarray]


def _as_array(image: ImageLike) -> np.ndarray:
    return image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)


def _as_tensor(image: ImageLike) -> Tensor:
    return image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float32))


# ---------------------------------------------------------------------------
# resampling operators
# ---------------------------------------------------------------------------
def _cubic(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


@lru_cache(maxsize=64)
def cubic_matrix(in_size: int, out_size: int) -> np.ndarray:
    """
    Keys cubic (a = -0.5) resampling matrix, out_size×in_size. When
    shrinking, the kernel is stretched by the scale factor (antialiasing).
    Borders replicate edge pixels; rows sum to one.
    """
    scale = in_size / out_size
    kernel_scale = max(scale, 1.0)
    centers = (np.arange(out_size) + 0.5) * scale - 0.5
    radius = 2.0 * kernel_scale
    matrix = np.zeros((out_size, in_size))
    for o, c in enumerate(centers):
        taps = np.arange(int(np.floor(c - radius)) + 1, int(np.floor(c + radius)) + 1)
        weights = _cubic((taps - c) / kernel_scale)
        np.add.at(matrix[o], np.clip(taps, 0, in_size - 1), weights)
    matrix /= matrix.sum(axis=1, keepdims=True)
    matrix.setflags(write=False)
    return matrix


@lru_cache(maxsize=64)
def box_matrix(in_size: int, factor: int) -> np.ndarray:
    """Block-average matrix: each output sample is the mean of ``factor`` inputs."""
    if in_size % factor:
        raise ShapeError(f"box downsampling needs a size divisible by {factor}, got {in_size}")
    matrix = np.kron(np.eye(in_size // factor), np.full((1, factor), 1.0 / factor))
    matrix.setflags(write=False)
    return matrix


def downsample(image: ImageLike, factor: int, kernel: Union[str, DownsamplerKind] = DownsamplerKind.BOX) -> Tensor:
    """Anti-aliased decimation of a C×H×W image by an integer factor (differentiable)."""
    kernel = coerce_value(DownsamplerKind, kernel, "downsampler")
    x = _as_tensor(image)
    if x.ndim != 3:
        raise ShapeError(f"downsample expects a C×H×W image, got shape {x.shape}")
    if factor < 1:
        raise ValueError(f"downsample factor must be positive, got {factor}")
    _, height, width = x.shape
    if height % factor or width % factor:
        raise ShapeError(f"image size {height}x{width} is not divisible by factor {factor}")
    if factor == 1:
        return x
    if kernel is DownsamplerKind.BOX:
        return resample(x, box_matrix(height, factor), box_matrix(width, factor))
    return resample(x, cubic_matrix(height, height // factor), cubic_matrix(width, width // factor))


def upscale_bicubic(image: ImageLike, factor: int) -> np.ndarray:
    """Bicubic upscaling baseline, clipped to [0, 1]."""
    x = _as_tensor(image)
    _, height, width = x.shape
    out = resample(x, cubic_matrix(height, height * factor), cubic_matrix(width, width * factor))
    return np.clip(out.data, 0.0, 1.0)


def upscale_bilinear(image: ImageLike, factor: int) -> np.ndarray:
    """Bilinear upscaling baseline."""
    return np.clip(upsample(_as_tensor(image), factor, "bilinear").data, 0.0, 1.0)


# ---------------------------------------------------------------------------
# degradations
# ---------------------------------------------------------------------------
def add_noise(clean: np.ndarray, spec: TaskSpec, rng: np.random.Generator) -> np.ndarray:
    noise = spec.noise
    if noise.kind is NoiseKind.GAUSSIAN:
        noisy = clean + rng.normal(0.0, noise.sigma, clean.shape)
    elif noise.kind is NoiseKind.POISSON:
        noisy = rng.poisson(np.clip(clean, 0.0, None) * noise.peak) / noise.peak
    else:
        return clean.copy()
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def degrade(clean: ImageLike, spec: TaskSpec, seed: int = 0) -> Tensor:
    """Apply the task's forward model; the same seed gives the same noise."""
    x = _as_array(clean).astype(np.float32)
    spec.check_observed(x.shape)
    rng = np.random.default_rng(seed)

    if spec.kind in (TaskKind.DENOISE, TaskKind.VIDEO_DENOISE):
        return Tensor(add_noise(x, spec, rng))
    if spec.kind is TaskKind.SR:
        return downsample(Tensor(x), spec.sr_factor, spec.downsampler).detach()
    return Tensor(x * spec.mask[None])


def random_mask(height: int, width: int, missing_fraction: float = 0.5, seed: int = 0, block: int = 1) -> np.ndarray:
    """
    Binary H×W mask (1 = known) with roughly ``missing_fraction`` of the
    pixels removed in ``block``×``block`` squares.
    """
    if not 0.0 <= missing_fraction < 1.0:
        raise ValueError(f"missing_fraction must lie in [0, 1), got {missing_fraction}")
    rng = np.random.default_rng(seed)
    cells = rng.random((-(-height // block), -(-width // block))) >= missing_fraction
    mask = np.kron(cells, np.ones((block, block)))[:height, :width].astype(np.float32)
    if not mask.any():
        mask.flat[0] = 1.0
    return mask


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------
def task_loss(output: Union[Tensor, Sequence[Tensor]], observed: ImageLike, spec: TaskSpec) -> Tensor:
    """
    Data term between the network output and the observation:
    denoise mse, sr mse after downsampling, inpaint mse on known pixels,
    video the mean of per-frame mse.
    """
    target = _as_array(observed)
    if spec.kind is TaskKind.VIDEO_DENOISE:
        frames = list(output) if not isinstance(output, Tensor) else [output[:, t] for t in range(output.shape[1])]
        if target.ndim != 4 or len(frames) != target.shape[1]:
            raise ShapeError(f"video output of {len(frames)} frames does not match observed shape {target.shape}")
        total = mse_loss(frames[0], target[:, 0])
        for t in range(1, len(frames)):
            total = total + mse_loss(frames[t], target[:, t])
        return total * (1.0 / len(frames))

    if not isinstance(output, Tensor):
        raise ShapeError("image tasks expect a single output tensor")
    if spec.kind is TaskKind.DENOISE:
        return mse_loss(output, target)
    if spec.kind is TaskKind.SR:
        return mse_loss(downsample(output, spec.sr_factor, spec.downsampler), target)
    return masked_mse_loss(output, target, spec.mask)
