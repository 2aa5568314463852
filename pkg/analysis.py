"""
Analysis harnesses for the PIP Restoration Toolkit

- Spectral-bias probe: fit a synthetic image made of vertical sinusoids and
  track how fast the amplitude at each tone converges.
- f_max sweep: denoise the same image with encodings of increasing f_max.
- Ablation: architecture × frequency mode × input kind on one noisy image.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from input_encoding import build_encoding
from metrics import psnr, psnr_correlation
from models import (
    EncodingKind, EncodingSpec, HourglassConfig, IterationReport, MLPConfig, NoiseKind,
    NoiseSpec, RunResult, TaskKind, TaskSpec, TrainConfig, create_denoise_task
)
from network import build_model
from spectral import fft_radix2
from tasks import degrade
from tensor import Tensor
from trainer import train
from utils.error_handler import ConfigError, ShapeError
from utils.logger import get_logger, log_performance

logger = get_logger(__name__)

DEFAULT_PROBE_FREQS = (4, 8, 16)
DEFAULT_THRESHOLD = 0.2
PROBE_F_MAX = 2 * np.pi * 8
NOT_REACHED = None

__all__ = [
    "SpectralProbe", "synth_sinusoid_image", "amplitude_spectrum", "amplitude_error",
    "convergence_order", "run_spectral_probe", "fmax_sweep", "run_ablation", "psnr_correlation",
]


# ---------------------------------------------------------------------------
# spectral probe
# ---------------------------------------------------------------------------
@dataclass
class SpectralProbe:
    """Amplitude error per sampled iteration (rows) and probe frequency (columns)."""
    probe_freqs: List[int]
    iterations: List[int] = field(default_factory=list)
    errors: List[List[float]] = field(default_factory=list)

    def add_row(self, iteration: int, errors: Sequence[float]) -> None:
        if len(errors) != len(self.probe_freqs):
            raise ShapeError(f"{len(errors)} errors do not match {len(self.probe_freqs)} probe frequencies")
        self.iterations.append(int(iteration))
        self.errors.append([float(e) for e in errors])

    @property
    def table(self) -> np.ndarray:
        return np.asarray(self.errors, dtype=np.float64).reshape(len(self.iterations), len(self.probe_freqs))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.table, columns=[f"err_f{i + 1}" for i in range(len(self.probe_freqs))])
        frame.insert(0, "iteration", self.iterations)
        return frame


def synth_sinusoid_image(height: int = 128, width: int = 128, freqs: Sequence[int] = DEFAULT_PROBE_FREQS,
                         amps: Sequence[float] = (1.0, 1.0, 1.0), channels: int = 3) -> Tensor:
    """
    Sum of sinusoids along the vertical axis (freqs in cycles per image),
    rescaled to [0, 1] and constant along each row.
    """
    if len(freqs) != len(amps):
        raise ConfigError(f"{len(freqs)} frequencies but {len(amps)} amplitudes")
    y = np.arange(height) / height
    signal = np.zeros(height)
    for f, a in zip(freqs, amps):
        signal += a * np.sin(2 * np.pi * f * y)
    span = signal.max() - signal.min()
    signal = (signal - signal.min()) / span if span > 0 else np.full(height, 0.5)
    image = np.broadcast_to(signal[None, :, None], (channels, height, width))
    return Tensor(np.ascontiguousarray(image, dtype=np.float32))


def amplitude_spectrum(image) -> np.ndarray:
    """Single-sided amplitude of the column profile (mean over channels and columns)."""
    data = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float64)
    profile = data.mean(axis=(0, 2)) if data.ndim == 3 else data.mean(axis=1)
    n = profile.shape[0]
    amp = np.abs(fft_radix2(profile)) / n
    amp[1:] *= 2.0
    return amp[: n // 2 + 1]


def amplitude_error(output, gt, probe_freqs: Sequence[int] = DEFAULT_PROBE_FREQS) -> np.ndarray:
    """|amplitude(output) − amplitude(gt)| at each probe bin."""
    out_amp, gt_amp = amplitude_spectrum(output), amplitude_spectrum(gt)
    if out_amp.shape != gt_amp.shape:
        raise ShapeError(f"output spectrum length {out_amp.shape} does not match gt spectrum length {gt_amp.shape}")
    bins = np.asarray(probe_freqs, dtype=int)
    if bins.min() < 0 or bins.max() >= len(gt_amp):
        raise ConfigError(f"probe frequencies {list(probe_freqs)} exceed the Nyquist bin {len(gt_amp) - 1}")
    return np.abs(out_amp[bins] - gt_amp[bins])


def convergence_order(probe: SpectralProbe, threshold: float = DEFAULT_THRESHOLD) -> List[Optional[int]]:
    """First sampled iteration where each error falls below threshold × its first-row value; None if never."""
    table = probe.table
    if table.shape[0] == 0:
        return [NOT_REACHED] * len(probe.probe_freqs)
    crossings = []
    for column in range(table.shape[1]):
        limit = threshold * table[0, column]
        hits = np.nonzero(table[:, column] < limit)[0]
        crossings.append(probe.iterations[hits[0]] if len(hits) else NOT_REACHED)
    return crossings


def is_ordered(crossings: Sequence[Optional[int]]) -> bool:
    """True when every frequency crossed and the crossings strictly increase."""
    if any(c is None for c in crossings):
        return False
    return all(a < b for a, b in zip(crossings, crossings[1:]))


def run_spectral_probe(size: int = 128, freqs: Sequence[int] = DEFAULT_PROBE_FREQS, iterations: int = 300,
                       sample_every: int = 5, f_max: float = PROBE_F_MAX, model_config: Optional[HourglassConfig] = None,
                       m: int = 8, seed: int = 0, lr: float = 0.01) -> Tuple[SpectralProbe, RunResult, Tensor]:
    """Fit the synthetic tone image and sample amplitude errors along the way."""
    gt = synth_sinusoid_image(size, size, freqs, amps=[1.0] * len(freqs))
    encoding = build_encoding(EncodingSpec(kind=EncodingKind.FF, m=m, f_max=f_max), size, size)
    config = model_config or HourglassConfig(in_channels=encoding.channels)
    model = build_model(config, seed=seed)
    probe = SpectralProbe(probe_freqs=list(freqs))

    def sample(report: IterationReport) -> None:
        if report.iteration == 1 or report.iteration % sample_every == 0:
            probe.add_row(report.iteration, amplitude_error(report.output, gt.data, freqs))

    spec = TaskSpec(kind=TaskKind.DENOISE, noise=NoiseSpec(kind=NoiseKind.NONE))
    cfg = TrainConfig(iterations=iterations, lr=lr, seed=seed, log_every=max(1, iterations // 5))
    with log_performance(f"spectral probe (size={size}, freqs={list(freqs)})"):
        result = train(model, encoding, gt.data, spec, cfg, gt=gt.data, callback=sample)
    logger.info(f"Spectral probe crossings: {convergence_order(probe)}")
    return probe, result, gt


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------
def _denoise_job(job: Dict) -> Dict:
    """One sweep or ablation point; top level so it pickles into worker processes."""
    clean, noisy = job["clean"], job["noisy"]
    encoding = build_encoding(job["encoding"], clean.shape[1], clean.shape[2])
    model_config = job["model_config"]
    model_config.in_channels = encoding.channels
    model_config.validate()
    model = build_model(model_config, seed=job["seed"])
    spec = create_denoise_task(job["sigma"])
    result = train(model, encoding, noisy, spec, job["train_config"], gt=clean)
    return {"label": job["label"], "psnr": result.final_psnr, "best_psnr": result.best_psnr,
            "raw_psnr": result.psnr_curve[-1], "restored": result.restored}


def _run_jobs(jobs: List[Dict], workers: int) -> List[Dict]:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_denoise_job, jobs))
    return [_denoise_job(job) for job in jobs]


def _noisy_pair(clean, sigma: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    clean = np.asarray(clean.data if isinstance(clean, Tensor) else clean, dtype=np.float32)
    noisy = degrade(clean, create_denoise_task(sigma), seed=seed).data
    return clean, noisy


def fmax_sweep(clean, sigma: float = 25.0, exponents: Sequence[int] = tuple(range(2, 17, 2)),
               iterations: int = 1800, model_config: Optional[HourglassConfig] = None, m: int = 8,
               seed: int = 0, workers: int = 1) -> Tuple[pd.DataFrame, Dict[float, np.ndarray]]:
    """Denoise ``clean`` + noise with f_max = 2^e for each exponent; returns (table, restored images)."""
    clean, noisy = _noisy_pair(clean, sigma, seed)
    jobs = []
    for exponent in exponents:
        f_max = float(2 ** exponent)
        jobs.append({
            "label": f_max, "clean": clean, "noisy": noisy, "sigma": sigma, "seed": seed,
            "encoding": EncodingSpec(kind=EncodingKind.FF, m=m, f_max=f_max),
            "model_config": HourglassConfig(**_config_kwargs(model_config)),
            "train_config": TrainConfig(iterations=iterations, seed=seed, log_every=0),
        })
    with log_performance(f"f_max sweep over {len(jobs)} values"):
        rows = _run_jobs(jobs, workers)
    table = pd.DataFrame({
        "f_max": [r["label"] for r in rows],
        "log2_f_max": [int(e) for e in exponents],
        "psnr": [r["psnr"] for r in rows],
        "best_psnr": [r["best_psnr"] for r in rows],
        "noisy_psnr": psnr(noisy, clean),
    })
    return table, {r["label"]: r["restored"] for r in rows}


def _config_kwargs(config) -> Dict:
    if config is None:
        return {}
    return {k: getattr(config, k) for k in config.__dataclass_fields__}


ABLATION_ARCHITECTURES = ("pip", "dip", "mlp")
ABLATION_INPUTS = ("ff", "ff_learned", "meshgrid", "noise")


def _ablation_model(arch: str, base: Optional[HourglassConfig]):
    if arch == "mlp":
        return MLPConfig()
    kwargs = _config_kwargs(base)
    kwargs["kernel"] = 3 if arch == "dip" else 1
    return HourglassConfig(**kwargs)


def run_ablation(clean, sigma: float = 25.0, architectures: Sequence[str] = ABLATION_ARCHITECTURES,
                 inputs: Sequence[str] = ABLATION_INPUTS, iterations: int = 1800,
                 model_config: Optional[HourglassConfig] = None, m: int = 8, f_max: float = 256.0,
                 seed: int = 0, workers: int = 1) -> Tuple[pd.DataFrame, Dict[str, np.ndarray]]:
    """Denoise one image for every (architecture, input) pair; returns (table, restored images)."""
    unknown = sorted(set(architectures) - set(ABLATION_ARCHITECTURES)) + sorted(set(inputs) - set(ABLATION_INPUTS))
    if unknown:
        raise ConfigError(f"unknown ablation option(s): {', '.join(unknown)}")
    clean, noisy = _noisy_pair(clean, sigma, seed)
    jobs = []
    for arch in architectures:
        for kind in inputs:
            encoding = EncodingSpec(
                kind=EncodingKind.NOISE if kind == "noise" else EncodingKind.MESHGRID if kind == "meshgrid" else EncodingKind.FF,
                m=m, f_max=f_max, trainable=kind == "ff_learned", seed=seed,
            )
            jobs.append({
                "label": f"{arch}/{kind}", "clean": clean, "noisy": noisy, "sigma": sigma, "seed": seed,
                "encoding": encoding, "model_config": _ablation_model(arch, model_config),
                "train_config": TrainConfig(iterations=iterations, seed=seed, log_every=0),
            })
    with log_performance(f"ablation over {len(jobs)} combinations"):
        rows = _run_jobs(jobs, workers)
    table = pd.DataFrame([
        {"architecture": r["label"].split("/")[0], "input": r["label"].split("/")[1],
         "psnr": r["psnr"], "best_psnr": r["best_psnr"]}
        for r in rows
    ])
    return table, {r["label"]: r["restored"] for r in rows}
