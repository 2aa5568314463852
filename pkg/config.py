"""
Configuration Management for the PIP Restoration Toolkit

Two layers live here:

- ``AppConfig``: application settings (log level, output root, snapshot
  cadence, worker count) from dataclass defaults, overridden by
  ``PIP_*`` environment variables, which may come from a ``.env`` file.
- ``RunConfig``: everything one run needs, stored as a sectioned
  key=value file (``run.cfg``). Values are resolved in the order
  defaults, preset, file, command-line flags.
"""

import configparser
import copy
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from dotenv import load_dotenv

from analysis import ABLATION_ARCHITECTURES, ABLATION_INPUTS, DEFAULT_PROBE_FREQS, DEFAULT_THRESHOLD, PROBE_F_MAX
from models import (
    ActivationKind, Architecture, DownsamplerKind, EncodingKind, EncodingSpec, HourglassConfig, MLPConfig,
    NoiseKind, NoiseSpec, StopRule, TaskKind, TaskSpec, TrainConfig, UpsampleMode, default_iterations,
    format_value, from_dict, to_dict,
)
from utils.error_handler import ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
COMMANDS = (
    "denoise", "sr", "inpaint", "video-denoise", "spectral-bias", "fmax-sweep",
    "ablation", "prop1-check", "count-params", "encode-dump",
)
COMMAND_TASKS = {
    "denoise": TaskKind.DENOISE,
    "sr": TaskKind.SR,
    "inpaint": TaskKind.INPAINT,
    "video-denoise": TaskKind.VIDEO_DENOISE,
}
AUTO = "auto"


# ---------------------------------------------------------------------------
# application settings
# ---------------------------------------------------------------------------
@dataclass
class AppDefaults:
    """Default application settings."""
    log_level: str = "INFO"
    output_root: str = "runs"
    snapshot_every: int = 0
    jobs: int = 1


ENV_OVERRIDES = {
    "PIP_LOG_LEVEL": ("log_level", str),
    "PIP_OUTPUT_ROOT": ("output_root", str),
    "PIP_JOBS": ("jobs", int),
    "PIP_SNAPSHOT_EVERY": ("snapshot_every", int),
}


class AppConfig:
    """Main application configuration manager."""

    def __init__(self, env_file: Optional[str] = None, use_env: bool = True):
        """Initialize defaults, then apply environment overrides (and ``.env`` if present)."""
        self.settings = AppDefaults()
        self.app_name = "PIP Restoration Toolkit"
        self.app_version = "1.0.0"
        if use_env:
            self.load_env(env_file)

    def load_env(self, env_file: Optional[str] = None) -> Dict[str, Any]:
        """Apply ``PIP_*`` overrides; variables already in the environment win over the file."""
        if env_file is None:
            if Path(".env").is_file():
                load_dotenv(".env", override=False)
        else:
            load_dotenv(env_file, override=False)

        applied = {}
        for variable, (attribute, cast) in ENV_OVERRIDES.items():
            raw = os.environ.get(variable)
            if raw is None or raw.strip() == "":
                continue
            try:
                value = cast(raw.strip())
            except ValueError:
                raise ConfigError(f"{variable}={raw!r} is not a valid {cast.__name__}") from None
            setattr(self.settings, attribute, value)
            applied[attribute] = value
        if applied:
            logger.debug(f"Environment overrides: {applied}")
        return applied

    @property
    def log_level(self) -> str:
        return self.settings.log_level.upper()

    @property
    def output_root(self) -> Path:
        return Path(self.settings.output_root)

    @output_root.setter
    def output_root(self, value: Union[str, Path]) -> None:
        self.settings.output_root = str(value)

    @property
    def jobs(self) -> int:
        return self.settings.jobs

    def update(self, **kwargs) -> None:
        """Update settings with provided values (None values are ignored)."""
        for key, value in kwargs.items():
            if value is None:
                continue
            if not hasattr(self.settings, key):
                raise ConfigError(f"unknown application setting '{key}'")
            setattr(self.settings, key, value)

    def validate_config(self) -> bool:
        """Validate the current configuration."""
        if self.log_level not in LOG_LEVELS:
            raise ConfigError(f"invalid log level '{self.settings.log_level}' (use one of {', '.join(LOG_LEVELS)})")
        if self.settings.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.settings.jobs}")
        if self.settings.snapshot_every < 0:
            raise ConfigError("snapshot_every must be non-negative")
        if not self.settings.output_root:
            raise ConfigError("output root must not be empty")
        return True

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self.settings)


# ---------------------------------------------------------------------------
# run file sections
# ---------------------------------------------------------------------------
@dataclass
class RunSection:
    command: str = "denoise"
    seed: int = 0
    preset: str = "pip-default"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command '{self.command}' (use one of {', '.join(COMMANDS)})")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset '{self.preset}' (use one of {', '.join(PRESETS)})")


@dataclass
class TaskSection:
    """Degradation settings; sigma is on the 0-255 scale."""
    noise: NoiseKind = NoiseKind.GAUSSIAN
    sigma: float = 25.0
    peak: float = 30.0
    sr_factor: int = 4
    downsampler: DownsamplerKind = DownsamplerKind.BICUBIC
    mask_fraction: float = 0.5
    mask_block: int = 1
    video_mode: str = "3d"

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("task.sigma must be non-negative")
        if not 0.0 < self.mask_fraction < 1.0:
            raise ConfigError(f"task.mask_fraction must lie in (0, 1), got {self.mask_fraction}")
        if self.mask_block < 1:
            raise ConfigError("task.mask_block must be >= 1")
        if self.video_mode not in ("3d", "2d"):
            raise ConfigError(f"task.video_mode must be 3d or 2d, got '{self.video_mode}'")

    def noise_spec(self) -> NoiseSpec:
        if self.noise is NoiseKind.GAUSSIAN:
            return NoiseSpec.gaussian(self.sigma)
        if self.noise is NoiseKind.POISSON:
            return NoiseSpec.poisson(self.peak)
        return NoiseSpec()

    def to_task_spec(self, kind: TaskKind, mask=None) -> TaskSpec:
        if kind is TaskKind.SR:
            return TaskSpec(kind=kind, sr_factor=self.sr_factor, downsampler=self.downsampler)
        if kind is TaskKind.INPAINT:
            return TaskSpec(kind=kind, mask=mask)
        return TaskSpec(kind=kind, noise=self.noise_spec())


@dataclass
class ModelSection:
    """Architecture choice plus the fields of both model configs; in_channels follows the encoding."""
    architecture: Architecture = Architecture.HOURGLASS
    levels: int = 5
    width: int = 128
    blocks_per_level: int = 2
    skip_channels: int = 4
    kernel: int = 1
    upsample_mode: UpsampleMode = UpsampleMode.BILINEAR
    activation: ActivationKind = ActivationKind.LEAKY_RELU
    activation_param: Optional[float] = None
    depth: int = 4
    out_channels: int = 3

    def to_model_config(self, in_channels: int) -> Union[HourglassConfig, MLPConfig]:
        if self.architecture is Architecture.FLAT_MLP:
            return MLPConfig(depth=self.depth, width=self.width, activation=self.activation,
                             activation_param=self.activation_param, out_channels=self.out_channels,
                             in_channels=in_channels)
        return HourglassConfig(levels=self.levels, width=self.width, blocks_per_level=self.blocks_per_level,
                               skip_channels=self.skip_channels, kernel=self.kernel,
                               upsample_mode=self.upsample_mode, activation=self.activation,
                               activation_param=self.activation_param, out_channels=self.out_channels,
                               in_channels=in_channels)


@dataclass
class IOSection:
    input: str = ""
    gt: str = ""
    mask: str = ""
    output_root: str = ""
    frame_rate: Optional[float] = None
    save_checkpoint: bool = False


@dataclass
class AnalysisSection:
    """Settings of the analytic commands (probe, sweeps, linear-theory suite)."""
    size: int = 128
    probe_freqs: Tuple[int, ...] = DEFAULT_PROBE_FREQS
    probe_f_max: float = PROBE_F_MAX
    probe_iterations: int = 300
    sample_every: int = 5
    threshold: float = DEFAULT_THRESHOLD
    exponents: Tuple[int, ...] = tuple(range(2, 17, 2))
    architectures: Tuple[str, ...] = ABLATION_ARCHITECTURES
    inputs: Tuple[str, ...] = ABLATION_INPUTS
    sizes: Tuple[int, ...] = (16, 32, 64)
    trials: int = 20
    input_law: str = "gaussian"
    support: Optional[int] = None
    steps: int = 200_000
    flops_size: int = 512

    def __post_init__(self):
        if self.size < 4 or self.sample_every < 1 or self.probe_iterations < 1:
            raise ConfigError("analysis.size must be >= 4; sample_every and probe_iterations must be >= 1")
        if self.trials < 1 or self.steps < 1:
            raise ConfigError("analysis.trials and analysis.steps must be >= 1")
        if self.input_law not in ("gaussian", "uniform"):
            raise ConfigError(f"analysis.input_law must be gaussian or uniform, got '{self.input_law}'")


SECTION_TYPES = {
    "run": RunSection,
    "task": TaskSection,
    "encoding": EncodingSpec,
    "model": ModelSection,
    "train": TrainConfig,
    "io": IOSection,
    "analysis": AnalysisSection,
}

# Layers applied on top of the dataclass defaults.
PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "pip-default": {
        "encoding": {"kind": "ff", "m": 8, "f_max": 256.0},
        "model": {"architecture": "hourglass", "levels": 5, "width": 128, "skip_channels": 4, "kernel": 1},
    },
    "dip-default": {
        "encoding": {"kind": "noise", "channels": 32},
        "model": {"architecture": "hourglass", "levels": 5, "width": 128, "skip_channels": 4, "kernel": 3},
    },
    "pip-video": {
        "encoding": {"kind": "ff", "m": 8, "f_max": 256.0, "m_temporal": 4, "f_max_temporal": 8.0},
        "model": {"architecture": "hourglass", "levels": 6, "width": 256, "skip_channels": 4, "kernel": 1},
    },
    "pip-inpaint": {
        "encoding": {"kind": "ff", "m": 8, "f_max": 256.0},
        "model": {"architecture": "hourglass", "levels": 6, "width": 128, "skip_channels": 4, "kernel": 1},
    },
    "flat-mlp": {
        "encoding": {"kind": "ff", "m": 8, "f_max": 256.0},
        "model": {"architecture": "flat_mlp", "depth": 4, "width": 256},
    },
}

Layer = Dict[str, Dict[str, Any]]


def _merge(base: Layer, layer: Mapping[str, Mapping[str, Any]]) -> Layer:
    merged = copy.deepcopy(base)
    for section, values in layer.items():
        if section not in SECTION_TYPES:
            raise ConfigError(f"unknown section [{section}] (known: {', '.join(SECTION_TYPES)})")
        merged.setdefault(section, {}).update(values)
    return merged


def read_run_file(path: Union[str, Path]) -> Layer:
    """Raw key=value layer from a run file; unknown sections are rejected."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"run file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError(f"cannot parse run file {path}: {e}") from None
    layer = {section: dict(parser.items(section)) for section in parser.sections()}
    return _merge({}, layer)


@dataclass
class RunConfig:
    """Fully typed description of one run."""
    run: RunSection = field(default_factory=RunSection)
    task: TaskSection = field(default_factory=TaskSection)
    encoding: EncodingSpec = field(default_factory=EncodingSpec)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    io: IOSection = field(default_factory=IOSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    auto_iterations: bool = True

    @classmethod
    def from_layer(cls, layer: Layer) -> 'RunConfig':
        sections = {}
        auto = True
        for name, section_type in SECTION_TYPES.items():
            values = dict(layer.get(name, {}))
            if name == "train":
                iterations = values.get("iterations")
                if iterations is None or str(iterations).strip().lower() in ("", AUTO):
                    values.pop("iterations", None)
                else:
                    auto = False
            sections[name] = from_dict(section_type, values, name)
        return cls(auto_iterations=auto, **sections)

    @classmethod
    def build(cls, preset: Optional[str] = None, path: Optional[Union[str, Path]] = None,
              overrides: Optional[Layer] = None) -> 'RunConfig':
        """
        Resolve a run configuration: dataclass defaults, then the preset,
        then the run file, then ``overrides`` (command-line flags). A preset
        named on the command line wins over one named in the file.
        """
        file_layer = read_run_file(path) if path else {}
        overrides = _merge({}, overrides or {})
        name = (overrides.get("run", {}).get("preset") or preset
                or file_layer.get("run", {}).get("preset") or "pip-default")
        if name not in PRESETS:
            raise ConfigError(f"unknown preset '{name}' (use one of {', '.join(PRESETS)})")
        layer = _merge({}, PRESETS[name])
        layer = _merge(layer, file_layer)
        layer = _merge(layer, overrides)
        layer.setdefault("run", {})["preset"] = name
        config = cls.from_layer(layer)
        logger.debug(f"Resolved run config (preset={name}, file={path or '-'})")
        return config

    @property
    def command(self) -> str:
        return self.run.command

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def task_kind(self) -> Optional[TaskKind]:
        return COMMAND_TASKS.get(self.run.command)

    def task_spec(self, mask=None) -> TaskSpec:
        kind = self.task_kind
        if kind is None:
            raise ConfigError(f"command '{self.command}' has no restoration task")
        return self.task.to_task_spec(kind, mask=mask)

    def model_config(self, video: bool = False) -> Union[HourglassConfig, MLPConfig]:
        return self.model.to_model_config(self.encoding.channel_count(video))

    def train_config(self, spec: Optional[TaskSpec] = None) -> TrainConfig:
        """TrainConfig with the run seed and, for auto budgets, the task's default iterations."""
        values = to_dict(self.train)
        values["seed"] = self.seed
        if self.auto_iterations and spec is not None:
            values["iterations"] = default_iterations(spec)
        return from_dict(TrainConfig, values, "train")

    def resolved(self, spec: Optional[TaskSpec] = None) -> 'RunConfig':
        """Copy with the iteration budget fixed, as written next to the outputs."""
        config = copy.deepcopy(self)
        if spec is not None:
            config.train = self.train_config(spec)
            config.auto_iterations = False
        return config

    def to_layer(self) -> Dict[str, Dict[str, str]]:
        layer = {}
        for name in SECTION_TYPES:
            section = getattr(self, name)
            layer[name] = {f.name: format_value(getattr(section, f.name)) for f in dataclasses.fields(section)}
        if self.auto_iterations:
            layer["train"]["iterations"] = AUTO
        return layer

    def save(self, path: Union[str, Path]) -> Path:
        """Write the configuration as a sectioned key=value file."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_dict(self.to_layer())
        with open(path, "w", encoding="utf-8") as f:
            f.write("# pip-restore run configuration\n")
            parser.write(f)
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'RunConfig':
        """Read a run file on its own (no preset layer beyond what the file names)."""
        return cls.build(path=path)


def list_presets() -> List[str]:
    return list(PRESETS)
