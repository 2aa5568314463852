"""
Core data models and validation for the PIP Restoration Toolkit

This module defines the task, encoding, model and training descriptions
used throughout the toolkit, plus the result containers a training run
produces. Every config dataclass validates itself on construction and
raises ConfigError on bad values.
"""

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar, Union, get_type_hints

import numpy as np
import pandas as pd

from utils.error_handler import ConfigError, DataError, ShapeError
from utils.logger import get_logger

logger = get_logger(__name__)

T = TypeVar("T")


class TaskKind(Enum):
    """Restoration tasks."""
    DENOISE = "denoise"
    SR = "sr"
    INPAINT = "inpaint"
    VIDEO_DENOISE = "video_denoise"


class NoiseKind(Enum):
    """Noise models for denoising tasks."""
    GAUSSIAN = "gaussian"
    POISSON = "poisson"
    NONE = "none"


class DownsamplerKind(Enum):
    """Decimation kernels for super-resolution."""
    BOX = "box"
    BICUBIC = "bicubic"


class EncodingKind(Enum):
    """Network input kinds."""
    FF = "ff"
    MESHGRID = "meshgrid"
    NOISE = "noise"


class ActivationKind(Enum):
    LEAKY_RELU = "leaky_relu"
    SINE = "sine"
    GAUSSIAN = "gaussian"


class UpsampleMode(Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"


class Architecture(Enum):
    HOURGLASS = "hourglass"
    FLAT_MLP = "flat_mlp"


class StopRule(Enum):
    """How a training run decides when to stop."""
    FIXED = "fixed"
    EMV = "emv"
    WMV = "wmv"


class StopAction(Enum):
    """What happens when a variance rule detects its minimum."""
    HALT = "halt"
    MONITOR = "monitor"


# ---------------------------------------------------------------------------
# dict conversion shared by run files and checkpoints
# ---------------------------------------------------------------------------
def _unwrap_optional(tp):
    args = getattr(tp, "__args__", None)
    if getattr(tp, "__origin__", None) is Union and args and type(None) in args:
        rest = [a for a in args if a is not type(None)]
        return rest[0], True
    return tp, False


def coerce_value(tp, value, name: str = "value"):
    """
    Convert a raw value (often a string from a run file) to the declared
    field type. Supports bool, int, float, str, Enum, Optional[...] and
    Tuple/List of ints or floats written comma-separated.
    """
    tp, optional = _unwrap_optional(tp)
    if value is None or (optional and isinstance(value, str) and value.strip() in ("", "none", "None")):
        if optional:
            return None
        raise ConfigError(f"{name} must not be empty")
    try:
        if isinstance(tp, type) and issubclass(tp, Enum):
            if isinstance(value, tp):
                return value
            text = str(value).strip().lower().replace("-", "_")
            for member in tp:
                if member.value == text or member.name.lower() == text:
                    return member
            raise ConfigError(f"{name}: '{value}' is not one of {[m.value for m in tp]}")
        if tp is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{name}: '{value}' is not a boolean")
        if tp is int:
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{name}: {value} is not an integer")
            return int(str(value).strip()) if isinstance(value, str) else int(value)
        if tp is float:
            return float(value)
        if tp is str:
            return str(value)
        origin = getattr(tp, "__origin__", None)
        if origin in (tuple, list, Tuple, List):
            inner = getattr(tp, "__args__", (str,))[0]
            items = value if isinstance(value, (list, tuple)) else [v for v in str(value).split(",") if v.strip()]
            converted = [coerce_value(inner, item, name) for item in items]
            return tuple(converted) if origin in (tuple, Tuple) else converted
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{name}: cannot interpret '{value}' ({e})") from None
    return value


def format_value(value) -> str:
    """Inverse of coerce_value for writing run files."""
    if value is None:
        return ""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def to_dict(obj) -> Dict[str, Any]:
    """Plain dict of a config dataclass; enums become their values, arrays are skipped."""
    result = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, np.ndarray):
            continue
        if isinstance(value, Enum):
            value = value.value
        elif dataclasses.is_dataclass(value):
            value = to_dict(value)
        elif isinstance(value, tuple):
            value = list(value)
        result[f.name] = value
    return result


def from_dict(cls: Type[T], data: Dict[str, Any], section: str = "") -> T:
    """Build a config dataclass from a dict, rejecting unknown keys."""
    hints = get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - known)
    if unknown:
        where = f" in section [{section}]" if section else ""
        raise ConfigError(f"unknown key(s){where}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        tp = hints[key]
        if dataclasses.is_dataclass(tp) and isinstance(value, dict):
            kwargs[key] = from_dict(tp, value, key)
        else:
            kwargs[key] = coerce_value(tp, value, f"{section + '.' if section else ''}{key}")
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# task description
# ---------------------------------------------------------------------------
@dataclass
class NoiseSpec:
    """Noise model; sigma is in [0,1] intensity units, peak is the Poisson photon peak."""
    kind: NoiseKind = NoiseKind.NONE
    sigma: float = 0.0
    peak: float = 30.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> bool:
        if not isinstance(self.kind, NoiseKind):
            raise ConfigError("noise kind must be a NoiseKind enum")
        if self.sigma < 0:
            raise ConfigError("noise sigma must be non-negative")
        if self.peak <= 0:
            raise ConfigError("poisson peak must be positive")
        return True

    @classmethod
    def gaussian(cls, sigma_255: float) -> 'NoiseSpec':
        """Gaussian noise with sigma given on the 0-255 scale (10 or 25 in the usual benchmarks)."""
        return cls(kind=NoiseKind.GAUSSIAN, sigma=sigma_255 / 255.0)

    @classmethod
    def poisson(cls, peak: float = 30.0) -> 'NoiseSpec':
        return cls(kind=NoiseKind.POISSON, peak=peak)


@dataclass
class TaskSpec:
    """
    What was done to the image. Only the fields relevant to ``kind`` are
    set: noise for (video) denoising, sr_factor and downsampler for SR,
    mask (H×W, 1 = known pixel) for inpainting.
    """
    kind: TaskKind
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    sr_factor: Optional[int] = None
    downsampler: Optional[DownsamplerKind] = None
    mask: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> bool:
        if not isinstance(self.kind, TaskKind):
            raise ConfigError("task kind must be a TaskKind enum")

        if self.kind is TaskKind.SR:
            if self.sr_factor not in (2, 4, 8):
                raise ConfigError(f"sr_factor must be 2, 4 or 8, got {self.sr_factor}")
            if self.downsampler is None:
                self.downsampler = DownsamplerKind.BICUBIC
        elif self.sr_factor is not None or self.downsampler is not None:
            raise ConfigError(f"sr_factor/downsampler only apply to sr tasks, not {self.kind.value}")

        if self.kind is TaskKind.INPAINT:
            if self.mask is None:
                raise ConfigError("inpaint tasks need a mask")
            mask = np.asarray(self.mask)
            if mask.ndim != 2:
                raise ShapeError(f"mask must be H×W, got shape {mask.shape}")
            if not np.all((mask == 0) | (mask == 1)):
                raise ConfigError("mask must be binary (1 = known pixel, 0 = missing)")
            if not mask.any():
                raise ConfigError("mask has no known pixels")
            self.mask = mask.astype(np.float32)
        elif self.mask is not None:
            raise ConfigError(f"mask only applies to inpaint tasks, not {self.kind.value}")

        if self.kind in (TaskKind.SR, TaskKind.INPAINT) and self.noise.kind is not NoiseKind.NONE:
            raise ConfigError(f"noise does not apply to {self.kind.value} tasks")
        return True

    @property
    def is_video(self) -> bool:
        return self.kind is TaskKind.VIDEO_DENOISE

    def target_spatial_shape(self, observed_shape: Tuple[int, ...]) -> Tuple[int, int]:
        """Spatial size of the restored image given the observed array shape."""
        height, width = observed_shape[-2:]
        if self.kind is TaskKind.SR:
            return height * self.sr_factor, width * self.sr_factor
        return height, width

    def check_observed(self, observed_shape: Tuple[int, ...]) -> None:
        expected_ndim = 4 if self.is_video else 3
        if len(observed_shape) != expected_ndim:
            raise ShapeError(f"{self.kind.value} expects a {expected_ndim}-D observation, got shape {tuple(observed_shape)}")
        if self.mask is not None and self.mask.shape != tuple(observed_shape[-2:]):
            raise ShapeError(f"mask shape {self.mask.shape} does not match observed shape {tuple(observed_shape)}")

    def to_dict(self) -> Dict[str, Any]:
        return to_dict(self)


def default_iterations(spec: TaskSpec) -> int:
    """Iteration budget per task when none is configured."""
    if spec.kind is TaskKind.DENOISE:
        if spec.noise.kind is NoiseKind.GAUSSIAN and spec.noise.sigma >= 20 / 255.0:
            return 1800
        return 3000
    if spec.kind is TaskKind.SR:
        return 4000 if spec.sr_factor == 8 else 2000
    if spec.kind is TaskKind.INPAINT:
        return 8000
    return 5000


# ---------------------------------------------------------------------------
# encoding / model descriptions
# ---------------------------------------------------------------------------
@dataclass
class EncodingSpec:
    """Network input: Fourier features, meshgrid or uniform noise."""
    kind: EncodingKind = EncodingKind.FF
    m: int = 8
    f_max: float = 256.0
    m_temporal: int = 4
    f_max_temporal: float = 8.0
    trainable: bool = False
    channels: int = 32
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> bool:
        if self.m < 1 or self.m_temporal < 1:
            raise ConfigError("m and m_temporal must be >= 1")
        if self.f_max < 1 or self.f_max_temporal < 1:
            raise ConfigError("f_max and f_max_temporal must be >= 1")
        if self.channels < 1:
            raise ConfigError("noise channels must be >= 1")
        if self.trainable and self.kind is not EncodingKind.FF:
            raise ConfigError("only ff encodings have trainable frequencies")
        return True

    def channel_count(self, video: bool = False) -> int:
        if self.kind is EncodingKind.FF:
            return 4 * self.m + (2 * self.m_temporal if video else 0)
        if self.kind is EncodingKind.MESHGRID:
            return 2
        return self.channels


@dataclass
class HourglassConfig:
    """U-Net style hourglass; kernel 1 is the pixel-level PIP model, kernel 3 the DIP baseline."""
    levels: int = 5
    width: int = 128
    blocks_per_level: int = 2
    skip_channels: int = 4
    kernel: int = 1
    upsample_mode: UpsampleMode = UpsampleMode.BILINEAR
    activation: ActivationKind = ActivationKind.LEAKY_RELU
    activation_param: Optional[float] = None
    out_channels: int = 3
    in_channels: int = 32

    def __post_init__(self):
        self.validate()

    def validate(self) -> bool:
        if self.in_channels <= 0:
            raise ConfigError(f"in_channels must be positive, got {self.in_channels}")
        if self.out_channels <= 0:
            raise ConfigError("out_channels must be positive")
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.blocks_per_level < 1:
            raise ConfigError("blocks_per_level must be >= 1")
        if not (self.width >= self.skip_channels >= 0):
            raise ConfigError("width >= skip_channels >= 0 is required")
        if self.width < 1:
            raise ConfigError("width must be positive")
        if self.kernel not in (1, 3):
            raise ConfigError(f"kernel must be 1 or 3, got {self.kernel}")
        return True


@dataclass
class MLPConfig:
    """Per-pixel MLP: depth × [1×1 conv, activation] then a 1×1 sigmoid head."""
    depth: int = 4
    width: int = 256
    activation: ActivationKind = ActivationKind.LEAKY_RELU
    activation_param: Optional[float] = None
    out_channels: int = 3
    in_channels: int = 32

    def __post_init__(self):
        self.validate()

    def validate(self) -> bool:
        if self.in_channels <= 0:
            raise ConfigError(f"in_channels must be positive, got {self.in_channels}")
        if self.out_channels <= 0:
            raise ConfigError("out_channels must be positive")
        if self.depth < 0:
            raise ConfigError("depth must be non-negative")
        if self.width < 1:
            raise ConfigError("width must be positive")
        return True


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------
@dataclass
class TrainConfig:
    """Optimization settings; variance stop rules are checked every ``check_stride`` iterations."""
    iterations: int = 1800
    lr: float = 0.01
    ema_decay: float = 0.99
    input_jitter_std: float = 0.0
    stop_rule: StopRule = StopRule.FIXED
    stop_action: StopAction = StopAction.HALT
    emv_decay: float = 0.99
    emv_warmup: int = 10
    window: int = 50
    patience: int = 100
    check_stride: int = 5
    seed: int = 0
    log_every: int = 100
    snapshot_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> bool:
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if not 0.0 <= self.emv_decay < 1.0:
            raise ConfigError(f"emv_decay must lie in [0, 1), got {self.emv_decay}")
        if self.input_jitter_std < 0:
            raise ConfigError("input_jitter_std must be non-negative")
        if self.window < 2:
            raise ConfigError("window must be >= 2")
        if self.patience < 1 or self.check_stride < 1:
            raise ConfigError("patience and check_stride must be >= 1")
        if self.emv_warmup < 0 or self.log_every < 0 or self.snapshot_every < 0:
            raise ConfigError("emv_warmup, log_every and snapshot_every must be non-negative")
        return True


@dataclass
class IterationReport:
    """What the training loop hands to its callback after every iteration."""
    iteration: int
    loss: float
    psnr: Optional[float]
    ema_psnr: Optional[float]
    output: np.ndarray = field(repr=False)
    ema_output: np.ndarray = field(repr=False)


@dataclass
class RunResult:
    """
    Outcome of one training run.

    ``restored`` is the delivered image: the EMA output at the stop
    iteration (the final EMA for fixed-budget runs). Curves have one entry
    per executed iteration; psnr curves are empty without ground truth.
    """
    output: np.ndarray = field(repr=False)
    ema_output: np.ndarray = field(repr=False)
    restored: np.ndarray = field(repr=False)
    loss_curve: List[float]
    psnr_curve: List[float]
    ema_psnr_curve: List[float]
    stop_iteration: int
    executed_iterations: int
    iterations: int
    stop_rule: StopRule = StopRule.FIXED
    stop_detected_at: Optional[int] = None
    restored_psnr: Optional[float] = None
    wall_clock: float = 0.0
    padding: Tuple[int, int, int, int] = (0, 0, 0, 0)
    variance_trace: List[Tuple[int, float]] = field(default_factory=list, repr=False)
    snapshots: List[Tuple[int, np.ndarray]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if len(self.loss_curve) != self.executed_iterations:
            raise DataError("loss curve length must equal executed iterations")
        for curve in (self.psnr_curve, self.ema_psnr_curve):
            if curve and len(curve) != self.executed_iterations:
                raise DataError("psnr curve length must equal executed iterations")
        if not 1 <= self.stop_iteration <= self.iterations:
            raise DataError(f"stop iteration {self.stop_iteration} outside 1..{self.iterations}")

    @property
    def has_ground_truth(self) -> bool:
        return bool(self.psnr_curve)

    @property
    def final_psnr(self) -> Optional[float]:
        return self.ema_psnr_curve[-1] if self.ema_psnr_curve else None

    @property
    def best_psnr(self) -> Optional[float]:
        return max(self.ema_psnr_curve) if self.ema_psnr_curve else None

    @property
    def best_iteration(self) -> Optional[int]:
        if not self.ema_psnr_curve:
            return None
        return int(np.argmax(self.ema_psnr_curve)) + 1

    def to_metrics(self) -> Dict[str, Any]:
        """Deterministic summary for metrics.json (no wall clock)."""
        return {
            "final_psnr": self.final_psnr,
            "best_psnr": self.best_psnr,
            "best_iteration": self.best_iteration,
            "stop_iter": self.stop_iteration,
            "stop_detected_at": self.stop_detected_at,
            "stop_rule": self.stop_rule.value,
            "restored_psnr": self.restored_psnr,
            "raw_final_psnr": self.psnr_curve[-1] if self.psnr_curve else None,
            "final_loss": self.loss_curve[-1],
            "executed_iterations": self.executed_iterations,
            "padding": list(self.padding),
        }

    def curves_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "iteration": np.arange(1, self.executed_iterations + 1),
            "loss": self.loss_curve,
        })
        if self.has_ground_truth:
            frame["psnr"] = self.psnr_curve
            frame["ema_psnr"] = self.ema_psnr_curve
        return frame


@dataclass
class FrameSequence:
    """Ordered, equal-sized RGB frames (each 3×H×W in [0,1])."""
    frames: List[np.ndarray] = field(repr=False)
    frame_rate: Optional[float] = None
    names: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.frames:
            raise DataError("frame sequence is empty")
        first = self.frames[0].shape
        for index, frame in enumerate(self.frames):
            if frame.shape != first:
                label = self.names[index] if index < len(self.names) else f"frame {index}"
                raise DataError(f"{label} has shape {frame.shape}, expected {first}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.frames[0].shape

    def to_array(self) -> np.ndarray:
        """C×T×H×W float32 array."""
        return np.stack(self.frames, axis=1).astype(np.float32)

    @classmethod
    def from_array(cls, video: np.ndarray, frame_rate: Optional[float] = None) -> 'FrameSequence':
        if video.ndim != 4:
            raise ShapeError(f"expected a C×T×H×W array, got shape {video.shape}")
        return cls(frames=[np.ascontiguousarray(video[:, t]) for t in range(video.shape[1])], frame_rate=frame_rate)


# Factory functions
def create_denoise_task(sigma_255: float = 25.0, poisson_peak: Optional[float] = None, video: bool = False) -> TaskSpec:
    """Create a (video) denoising task; a Poisson peak selects Poisson noise."""
    noise = NoiseSpec.poisson(poisson_peak) if poisson_peak else NoiseSpec.gaussian(sigma_255)
    return TaskSpec(kind=TaskKind.VIDEO_DENOISE if video else TaskKind.DENOISE, noise=noise)


def create_sr_task(factor: int = 4, downsampler: Union[str, DownsamplerKind] = DownsamplerKind.BICUBIC) -> TaskSpec:
    return TaskSpec(kind=TaskKind.SR, sr_factor=factor,
                    downsampler=coerce_value(DownsamplerKind, downsampler, "downsampler"))


def create_inpaint_task(mask: np.ndarray) -> TaskSpec:
    return TaskSpec(kind=TaskKind.INPAINT, mask=mask)
