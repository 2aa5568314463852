"""
Image quality metrics for the PIP Restoration Toolkit

PSNR for [0, 1] images, SSIM over uniform 8×8 windows and a windowed 3D
SSIM for videos (8×8 spatial × 3 frame windows), plus the R² used to compare
per-image PSNRs of two methods.
"""

from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

from tensor import Tensor
from utils.error_handler import DataError, ShapeError

PSNR_CAP = 100.0
MSE_FLOOR = 1e-10
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

ImageLike = Union[Tensor, np.ndarray]


def _pair(a: ImageLike, b: ImageLike):
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shape {a.shape} does not match image shape {b.shape}")
    return a, b


def psnr(a: ImageLike, b: ImageLike) -> float:
    """10·log10(1/mse) in dB, capped at 100 dB."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < MSE_FLOOR:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _windowed_ssim(a: np.ndarray, b: np.ndarray, window: Sequence[int]) -> float:
    axes = tuple(range(-len(window), 0))
    window = tuple(min(w, a.shape[ax]) for w, ax in zip(window, axes))

    def local_mean(x):
        return sliding_window_view(x, window, axis=axes).mean(axis=tuple(range(-len(window), 0)))

    mu_a, mu_b = local_mean(a), local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b
    numerator = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    denominator = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.clip(np.mean(numerator / denominator), 0.0, 1.0))


def ssim(a: ImageLike, b: ImageLike, window: int = 8) -> float:
    """Mean SSIM of H×W or C×H×W images, averaged over channels and windows."""
    a, b = _pair(a, b)
    if a.ndim not in (2, 3):
        raise ShapeError(f"ssim expects H×W or C×H×W images, got shape {a.shape}")
    return _windowed_ssim(a, b, (window, window))


def ssim3d_windowed(video_a: ImageLike, video_b: ImageLike, window: int = 8, frames: int = 3) -> float:
    """SSIM of C×T×H×W videos over frames×window×window space-time windows."""
    a, b = _pair(video_a, video_b)
    if a.ndim != 4:
        raise ShapeError(f"ssim3d_windowed expects C×T×H×W videos, got shape {a.shape}")
    return _windowed_ssim(a, b, (frames, window, window))


def psnr_correlation(xs: Sequence[float], ys: Sequence[float]) -> float:
    """R² of the least-squares line predicting ys from xs."""
    x = np.asarray(xs, dtype=np.float64).reshape(-1, 1)
    y = np.asarray(ys, dtype=np.float64)
    if len(x) != len(y):
        raise ShapeError(f"{len(x)} x values do not match {len(y)} y values")
    if len(y) < 2:
        raise DataError("psnr_correlation needs at least two points")
    fit = LinearRegression().fit(x, y)
    return float(r2_score(y, fit.predict(x)))
