"""
Linear-theory checks for the PIP Restoration Toolkit

For a linear model y ≈ h ⊛ n (circular convolution of a support-r kernel
with a fixed input n), fitting h by gradient descent reaches the same
minimum as fitting one independent coefficient per Fourier bin, which is
what a pixel-wise network over Fourier features does. With a full-support
kernel the two optima coincide, and the optima are linked bin by bin:
ĥ_l = dft(h*)_l · dft(n)_l (unitary DFT).

Everything here is float64 and single-threaded.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from spectral import fft_radix2, ifft_radix2
from utils.error_handler import ConfigError, DataError, ShapeError
from utils.logger import get_logger, log_performance

logger = get_logger(__name__)

DEFAULT_STEPS = 200_000
GRAD_TOL = 1e-12
ZERO_BIN_RTOL = 1e-12
PASS_TOL = 1e-6
SYMMETRY_TOL = 1e-9

ArrayLike = Union['Signal1D', np.ndarray, Sequence[float]]


@dataclass
class Signal1D:
    """Real signal of power-of-two length N ≥ 4."""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        n = len(self.values)
        if n < 4 or n & (n - 1):
            raise ShapeError(f"signal length must be a power of two >= 4, got {n}")

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class SpectrumCoeffs:
    """Complex spectrum; ``symmetric`` marks conjugate symmetry (spectrum of a real signal)."""
    values: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128).reshape(-1)
        if self.symmetric and not is_conjugate_symmetric(self.values):
            raise DataError("spectrum flagged symmetric is not conjugate-symmetric")

    def __len__(self) -> int:
        return len(self.values)


def is_conjugate_symmetric(values: np.ndarray, tol: float = SYMMETRY_TOL) -> bool:
    mirrored = np.conj(values[(-np.arange(len(values))) % len(values)])
    return bool(np.max(np.abs(values - mirrored)) <= tol * max(1.0, np.max(np.abs(values))))


def _signal(x: ArrayLike) -> Signal1D:
    return x if isinstance(x, Signal1D) else Signal1D(np.asarray(x))


def dft(signal: ArrayLike) -> SpectrumCoeffs:
    """Unitary DFT: X_k = N^(-1/2) Σ x_j exp(−2πi jk/N)."""
    s = _signal(signal)
    return SpectrumCoeffs(fft_radix2(s.values) / np.sqrt(len(s)), symmetric=True)


def idft(coeffs: Union[SpectrumCoeffs, np.ndarray]) -> Signal1D:
    """Inverse of ``dft``; requires a conjugate-symmetric spectrum so the result is real."""
    if not isinstance(coeffs, SpectrumCoeffs):
        coeffs = SpectrumCoeffs(coeffs, symmetric=is_conjugate_symmetric(np.asarray(coeffs, dtype=np.complex128)))
    if not coeffs.symmetric:
        raise DataError("idft of a spectrum without conjugate symmetry would not be real")
    values = ifft_radix2(coeffs.values) * np.sqrt(len(coeffs))
    return Signal1D(values.real)


def conv_matrix(n: ArrayLike, r: int) -> np.ndarray:
    """N×r matrix C with (C h)[k] = Σ_j h[j]·n[(k − j) mod N]."""
    values = _signal(n).values
    size = len(values)
    if not 1 <= r <= size:
        raise ConfigError(f"kernel support r must lie in 1..{size}, got {r}")
    index = (np.arange(size)[:, None] - np.arange(r)[None, :]) % size
    return values[index]


def circular_conv(h: ArrayLike, n: ArrayLike) -> Signal1D:
    """Circular convolution of a support-r kernel (len(h) = r ≤ N) with n."""
    h = np.asarray(h.values if isinstance(h, Signal1D) else h, dtype=np.float64).reshape(-1)
    return Signal1D(conv_matrix(n, len(h)) @ h)


def _power_iteration(gram: np.ndarray, iterations: int = 200) -> float:
    v = np.ones(gram.shape[0]) / np.sqrt(gram.shape[0])
    estimate = 0.0
    for _ in range(iterations):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        estimate = float(v @ gram @ v)
    return max(estimate, float(np.max(np.abs(np.diag(gram)))))


def _gradient_descent(design: np.ndarray, y: np.ndarray, steps: int, lr: Optional[float]) -> Tuple[np.ndarray, float]:
    """Minimize ||design·w − y||² from w = 0 on the Gram form."""
    gram = design.T @ design
    rhs = design.T @ y
    if lr is None:
        top = _power_iteration(gram)
        lr = 0.5 / top if top > 0 else 0.0
    w = np.zeros(design.shape[1])
    for _ in range(steps):
        grad = 2.0 * (gram @ w - rhs)
        if np.linalg.norm(grad) <= GRAD_TOL:
            break
        w = w - lr * grad
    residual = design @ w - y
    return w, float(residual @ residual)


def fit_conv_model(n: ArrayLike, y: ArrayLike, r: int, steps: int = DEFAULT_STEPS,
                   lr: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """
    Gradient descent on the support-r kernel h for ||h ⊛ n − y||². The
    default step size is 1/(2·λmax) of the Gram matrix (power iteration).
    Returns (h*, final loss).
    """
    y = _signal(y).values
    design = conv_matrix(n, r)
    if len(y) != design.shape[0]:
        raise ShapeError(f"target length {len(y)} does not match input length {design.shape[0]}")
    return _gradient_descent(design, y, steps, lr)


def fourier_features(n: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """
    Real cos/sin features at f_l = 2πl/N for bins where dft(n) is nonzero.
    Returns (N×p feature matrix, per-column (bin, part) with part 0 = cos, 1 = sin).
    """
    spectrum = dft(n).values
    size = len(spectrum)
    keep = np.abs(spectrum) > ZERO_BIN_RTOL * np.max(np.abs(spectrum))
    k = np.arange(size)
    columns, layout = [], []
    for l in range(size // 2 + 1):
        if not keep[l]:
            continue
        phase = 2.0 * np.pi * l * k / size
        columns.append(np.cos(phase))
        layout.append((l, 0))
        if 0 < l < size // 2:
            columns.append(np.sin(phase))
            layout.append((l, 1))
    if not columns:
        raise DataError("input signal has an all-zero spectrum")
    return np.stack(columns, axis=1), np.asarray(layout)


def _coefficients_to_spectrum(weights: np.ndarray, layout: np.ndarray, size: int) -> SpectrumCoeffs:
    spectrum = np.zeros(size, dtype=np.complex128)
    for w, (l, part) in zip(weights, layout):
        if l == 0 or l == size // 2:
            spectrum[l] += w
        elif part == 0:
            spectrum[l] += w / 2.0
        else:
            spectrum[l] -= 1j * w / 2.0
    for l in range(1, size // 2):
        spectrum[size - l] = np.conj(spectrum[l])
    return SpectrumCoeffs(spectrum, symmetric=True)


def fit_elementwise(n: ArrayLike, y: ArrayLike, steps: int = DEFAULT_STEPS,
                    lr: Optional[float] = None) -> Tuple[SpectrumCoeffs, float]:
    """
    Gradient descent on one real coefficient per Fourier feature of the bins
    where n has energy. Returns (ĥ, final loss) with ĥ_l = dft(prediction)_l / sqrt(N),
    which equals dft(h)_l·dft(n)_l for the equivalent kernel h.
    """
    y = _signal(y).values
    features, layout = fourier_features(n)
    if len(y) != features.shape[0]:
        raise ShapeError(f"target length {len(y)} does not match input length {features.shape[0]}")
    weights, loss = _gradient_descent(features, y, steps, lr)
    return _coefficients_to_spectrum(weights, layout, len(y)), loss


def ls_oracle(n: ArrayLike, y: ArrayLike, r: int) -> float:
    """Exact least-squares minimum of ||C_n h − y||² over support-r kernels."""
    y = _signal(y).values
    design = conv_matrix(n, r)
    gram = design.T @ design
    try:
        h = np.linalg.solve(gram, design.T @ y)
    except np.linalg.LinAlgError:
        h = np.linalg.lstsq(design, y, rcond=None)[0]
    residual = design @ h - y
    return float(residual @ residual)


def spectrum_ratio(n: ArrayLike) -> float:
    """min|dft(n)| / median|dft(n)|, used to reject near-degenerate inputs."""
    magnitudes = np.abs(dft(n).values)
    median = float(np.median(magnitudes))
    return float(np.min(magnitudes)) / median if median > 0 else 0.0


def sample_input(size: int, rng: np.random.Generator, input_law: str = "gaussian",
                 min_ratio: float = 0.1, max_tries: int = 1000) -> np.ndarray:
    """Draw n (Gaussian or uniform) until its weakest bin is at least min_ratio of the median bin."""
    for _ in range(max_tries):
        if input_law == "gaussian":
            n = rng.standard_normal(size)
        elif input_law == "uniform":
            n = rng.random(size)
        else:
            raise ConfigError(f"unknown input law '{input_law}' (use gaussian or uniform)")
        if spectrum_ratio(n) > min_ratio:
            return n
    raise DataError(f"could not draw a well-conditioned {input_law} input of length {size}")


def prop1_suite(sizes: Sequence[int] = (16, 32, 64), trials: int = 20, seed: int = 0,
                input_law: str = "gaussian", r: Optional[int] = None, steps: int = DEFAULT_STEPS,
                min_ratio: float = 0.1) -> pd.DataFrame:
    """
    Fit both models on random (n, y) pairs; one row per trial with the
    losses, the conv/element-wise gap and the gap to the exact optimum.
    ``r`` defaults to the full support N.
    """
    rng = np.random.default_rng(seed)
    rows = []
    with log_performance(f"linear-theory suite (N={list(sizes)}, trials={trials}, law={input_law})"):
        for size in sizes:
            support = size if r is None else r
            for trial in range(trials):
                n = sample_input(size, rng, input_law, min_ratio)
                y = rng.standard_normal(size)
                _, conv_loss = fit_conv_model(n, y, support, steps=steps)
                oracle = ls_oracle(n, y, support)
                row = {"N": size, "r": support, "trial": trial, "conv_loss": conv_loss, "oracle_loss": oracle}
                if support == size:
                    _, element_loss = fit_elementwise(n, y, steps=steps)
                    row["elementwise_loss"] = element_loss
                    row["gap"] = abs(conv_loss - element_loss)
                    row["oracle_gap"] = max(abs(conv_loss - oracle), abs(element_loss - oracle))
                else:
                    row["elementwise_loss"] = np.nan
                    row["gap"] = np.nan
                    row["oracle_gap"] = abs(conv_loss - oracle)
                row["passed"] = bool(row["oracle_gap"] < PASS_TOL and (np.isnan(row["gap"]) or row["gap"] < PASS_TOL))
                rows.append(row)
    table = pd.DataFrame(rows, columns=["N", "r", "trial", "conv_loss", "elementwise_loss", "oracle_loss",
                                        "gap", "oracle_gap", "passed"])
    logger.info(f"Linear-theory suite: {int(table['passed'].sum())}/{len(table)} trials passed")
    return table


def summarize_suite(table: pd.DataFrame) -> pd.DataFrame:
    """One row per N: worst gaps and whether every trial passed."""
    return table.groupby(["N", "r"], as_index=False).agg(
        trials=("trial", "count"),
        max_gap=("gap", "max"),
        max_oracle_gap=("oracle_gap", "max"),
        passed=("passed", "all"),
    )
