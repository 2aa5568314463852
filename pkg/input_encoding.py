"""
Network Inputs for the PIP Restoration Toolkit

Builds the input code z: Fourier-feature grids (2D and 3D), the two-channel
meshgrid, and DIP-style uniform noise. Coordinates are normalized to [0, 1]
along every axis and features are cos/sin of f·v in radians.

Channel layout of a Fourier grid is axis-major, frequency-minor, cos before
sin: [cos f0·y, sin f0·y, …, cos f(m-1)·y, sin f(m-1)·y, same for x, same
for t]. Saved runs rely on this order.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from models import EncodingKind, EncodingSpec
from tensor import Parameter, Tensor, concat
from utils.error_handler import ConfigError, ShapeError
from utils.logger import get_logger, log_function_call

logger = get_logger(__name__)

FREQUENCY_FLOOR = 1e-3
NOISE_SCALE = 0.1


@dataclass
class FrequencySet:
    """Log-linear frequency ladder f_i = sigma^(i/m) ending at f_max."""
    m: int
    f_max: float
    sigma: float
    freqs: np.ndarray
    trainable: bool = False
    name: str = "encoding.freqs"
    parameter: Optional[Parameter] = field(default=None, repr=False)

    def __post_init__(self):
        if self.m != len(self.freqs):
            raise ConfigError(f"frequency set holds {len(self.freqs)} values, expected m={self.m}")
        if self.m > 1 and not np.all(np.diff(self.freqs) > 0):
            raise ConfigError("frequencies must be strictly increasing")
        if self.trainable and self.parameter is None:
            self.parameter = Parameter(np.asarray(self.freqs, dtype=np.float32), name=self.name)

    @property
    def values(self) -> np.ndarray:
        """Current frequencies; for trainable sets these move during training."""
        return self.parameter.data if self.parameter is not None else self.freqs

    def project(self, floor: float = FREQUENCY_FLOOR) -> None:
        """Clamp trainable frequencies to stay positive."""
        if self.parameter is not None:
            np.maximum(self.parameter.data, floor, out=self.parameter.data)


def frequency_ladder(m: int, f_max: float, trainable: bool = False, name: str = "encoding.freqs") -> FrequencySet:
    """
    Frequencies 1 = f_0 < … < f_(m-1) = f_max, evenly spaced in log.

    For m = 1 the ladder is just [f_max].
    """
    if m < 1:
        raise ConfigError(f"m must be >= 1, got {m}")
    if f_max < 1:
        raise ConfigError(f"f_max must be >= 1, got {f_max}")
    if m == 1:
        return FrequencySet(m=1, f_max=f_max, sigma=f_max, freqs=np.array([float(f_max)]), trainable=trainable, name=name)
    if f_max == 1:
        raise ConfigError("f_max must exceed 1 when m >= 2")
    sigma = float(f_max) ** (m / (m - 1))
    # f_max**(i/(m-1)) equals sigma**(i/m) and hits both ends exactly
    freqs = float(f_max) ** (np.arange(m) / (m - 1))
    return FrequencySet(m=m, f_max=float(f_max), sigma=sigma, freqs=freqs, trainable=trainable, name=name)


def axis_coordinates(length: int) -> np.ndarray:
    """Coordinates i/(length-1) in [0, 1]; a single sample sits at 0."""
    if length < 1:
        raise ShapeError(f"axis length must be >= 1, got {length}")
    if length == 1:
        return np.zeros(1)
    return np.arange(length) / (length - 1)


def _axis_features(coords: np.ndarray, fs: FrequencySet, axis: int, grid_shape: Tuple[int, ...]) -> Tensor:
    """2m feature channels varying along one grid axis, differentiable in the frequencies."""
    freqs = np.asarray(fs.values, dtype=np.float64)
    m = len(freqs)
    phase = np.outer(freqs, coords)
    cos, sin = np.cos(phase), np.sin(phase)
    feats = np.stack([cos, sin], axis=1).reshape(2 * m, len(coords))

    view = [2 * m] + [1] * len(grid_shape)
    view[axis + 1] = len(coords)
    data = np.ascontiguousarray(np.broadcast_to(feats.reshape(view), (2 * m,) + tuple(grid_shape)), dtype=np.float32)

    if fs.parameter is None:
        return Tensor(data)

    reduce_axes = tuple(i + 1 for i in range(len(grid_shape)) if i != axis)

    def backward(g):
        per_coord = g.sum(axis=reduce_axes).reshape(m, 2, len(coords)).astype(np.float64)
        grad = (-coords * sin * per_coord[:, 0] + coords * cos * per_coord[:, 1]).sum(axis=1)
        return (grad.astype(fs.parameter.dtype),)

    return Tensor.from_op(data, (fs.parameter,), backward, "fourier_features")


@dataclass
class EncodingTensor:
    """
    The network input z plus how it was made.

    Fixed encodings are computed once. Trainable ones rebuild their tensor
    through ``materialize()`` each iteration so gradients reach the
    frequency parameters.
    """
    tensor: Tensor
    kind: EncodingKind
    channels_per_axis: Dict[str, int] = field(default_factory=dict)
    seed: Optional[int] = None
    frequency_sets: List[FrequencySet] = field(default_factory=list, repr=False)
    builder: Optional[Callable[[], Tensor]] = field(default=None, repr=False)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.tensor.shape

    @property
    def channels(self) -> int:
        return self.tensor.shape[0]

    @property
    def spatial_shape(self) -> Tuple[int, int]:
        return self.tensor.shape[-2:]

    @property
    def frames(self) -> Optional[int]:
        return self.tensor.shape[1] if self.tensor.ndim == 4 else None

    @property
    def trainable(self) -> bool:
        return any(fs.parameter is not None for fs in self.frequency_sets)

    def parameters(self) -> List[Parameter]:
        return [fs.parameter for fs in self.frequency_sets if fs.parameter is not None]

    def materialize(self) -> Tensor:
        if self.trainable and self.builder is not None:
            self.tensor = self.builder()
        return self.tensor

    def project(self, floor: float = FREQUENCY_FLOOR) -> None:
        for fs in self.frequency_sets:
            fs.project(floor)


def _unique_sets(sets: Sequence[FrequencySet]) -> List[FrequencySet]:
    seen, result = set(), []
    for fs in sets:
        if id(fs) not in seen:
            seen.add(id(fs))
            result.append(fs)
    return result


def fourier_grid_2d(height: int, width: int, fs: FrequencySet) -> EncodingTensor:
    """4m channels: vertical cos/sin ladder, then horizontal."""
    grid = (height, width)
    ys, xs = axis_coordinates(height), axis_coordinates(width)

    def build() -> Tensor:
        return concat([_axis_features(ys, fs, 0, grid), _axis_features(xs, fs, 1, grid)], axis=0)

    return EncodingTensor(
        tensor=build(),
        kind=EncodingKind.FF,
        channels_per_axis={"vertical": 2 * fs.m, "horizontal": 2 * fs.m},
        frequency_sets=[fs],
        builder=build,
    )


def fourier_grid_3d(frames: int, height: int, width: int, fs_spatial: FrequencySet,
                    fs_temporal: FrequencySet) -> EncodingTensor:
    """C×T×H×W grid with 4·m_spatial + 2·m_temporal channels; time runs 0 (first frame) to 1 (last)."""
    if frames < 2:
        raise ShapeError(f"3D encoding needs at least 2 frames, got {frames}; use the 2D encoding")
    grid = (frames, height, width)
    ts, ys, xs = axis_coordinates(frames), axis_coordinates(height), axis_coordinates(width)

    def build() -> Tensor:
        return concat([
            _axis_features(ys, fs_spatial, 1, grid),
            _axis_features(xs, fs_spatial, 2, grid),
            _axis_features(ts, fs_temporal, 0, grid),
        ], axis=0)

    return EncodingTensor(
        tensor=build(),
        kind=EncodingKind.FF,
        channels_per_axis={"vertical": 2 * fs_spatial.m, "horizontal": 2 * fs_spatial.m,
                           "temporal": 2 * fs_temporal.m},
        frequency_sets=_unique_sets([fs_spatial, fs_temporal]),
        builder=build,
    )


def meshgrid_2d(height: int, width: int, frames: Optional[int] = None) -> EncodingTensor:
    """Channel 0 holds the vertical coordinate, channel 1 the horizontal one."""
    ys, xs = axis_coordinates(height), axis_coordinates(width)
    grid = np.stack([
        np.broadcast_to(ys[:, None], (height, width)),
        np.broadcast_to(xs[None, :], (height, width)),
    ]).astype(np.float32)
    if frames is not None:
        grid = np.repeat(grid[:, None], frames, axis=1)
    return EncodingTensor(tensor=Tensor(grid), kind=EncodingKind.MESHGRID,
                          channels_per_axis={"vertical": 1, "horizontal": 1})


def noise_input(channels: int, height: int, width: int, seed: int = 0, frames: Optional[int] = None) -> EncodingTensor:
    """I.i.d. uniform values on [0, 0.1), reproducible from the seed."""
    rng = np.random.default_rng(seed)
    shape = (channels, height, width) if frames is None else (channels, frames, height, width)
    values = rng.random(shape, dtype=np.float32) * np.float32(NOISE_SCALE)
    np.minimum(values, np.nextafter(np.float32(NOISE_SCALE), np.float32(0)), out=values)
    return EncodingTensor(tensor=Tensor(values), kind=EncodingKind.NOISE,
                          channels_per_axis={"noise": channels}, seed=seed)


@log_function_call
def build_encoding(spec: EncodingSpec, height: int, width: int, frames: Optional[int] = None) -> EncodingTensor:
    """Build the input code described by ``spec``; ``frames`` selects the video layout."""
    if spec.kind is EncodingKind.NOISE:
        return noise_input(spec.channels, height, width, seed=spec.seed, frames=frames)
    if spec.kind is EncodingKind.MESHGRID:
        return meshgrid_2d(height, width, frames=frames)

    spatial = frequency_ladder(spec.m, spec.f_max, trainable=spec.trainable, name="encoding.freqs")
    if frames is None:
        encoding = fourier_grid_2d(height, width, spatial)
    else:
        temporal = frequency_ladder(spec.m_temporal, spec.f_max_temporal, trainable=spec.trainable,
                                    name="encoding.freqs_temporal")
        encoding = fourier_grid_3d(frames, height, width, spatial, temporal)
    logger.debug(f"Built ff encoding with {encoding.channels} channels, f_max={spec.f_max}")
    return encoding


def describe_channels(encoding: EncodingTensor) -> List[Dict[str, object]]:
    """One row per channel: index, axis, frequency and cos/sin."""
    rows = []
    if encoding.kind is not EncodingKind.FF:
        for index in range(encoding.channels):
            rows.append({"channel": index, "axis": next(iter(encoding.channels_per_axis)), "frequency": None, "part": None})
        return rows
    index = 0
    for axis, count in encoding.channels_per_axis.items():
        fs = encoding.frequency_sets[-1] if axis == "temporal" else encoding.frequency_sets[0]
        values = fs.values
        for k in range(count // 2):
            for part in ("cos", "sin"):
                rows.append({"channel": index, "axis": axis, "frequency": float(values[k]), "part": part})
                index += 1
    return rows


def contact_sheet(encoding: EncodingTensor, columns: int = 8, gap: int = 2, frame: int = 0) -> np.ndarray:
    """
    Tile every channel of a 2D encoding (or one frame of a 3D one) into a
    single grayscale image in [0, 1]; Fourier values are mapped from [-1, 1].
    """
    data = encoding.tensor.data
    if data.ndim == 4:
        data = data[:, frame]
    if encoding.kind is EncodingKind.FF:
        data = (data + 1.0) / 2.0
    elif encoding.kind is EncodingKind.NOISE:
        data = data / NOISE_SCALE
    channels, height, width = data.shape
    columns = max(1, min(columns, channels))
    rows = -(-channels // columns)
    sheet = np.ones((rows * height + (rows - 1) * gap, columns * width + (columns - 1) * gap), dtype=np.float32)
    for index in range(channels):
        r, c = divmod(index, columns)
        top, left = r * (height + gap), c * (width + gap)
        sheet[top:top + height, left:left + width] = data[index]
    return np.clip(sheet, 0.0, 1.0)
