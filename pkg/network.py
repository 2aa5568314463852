"""
Hourglass Networks for the PIP Restoration Toolkit

The hourglass is a U-Net style encoder/decoder. With kernel 1 every conv is
a pixel-level MLP and the stride-2 first conv of each encoder stage is
exactly nearest-neighbour subsampling (the PIP model); kernel 3 gives the
DIP baseline. A flat per-pixel MLP shares the same interface.

Wiring, for stage i = 1..levels:
    encoder  e_i = blocks(e_(i-1)), first block strided, output at H/2^i
    skip     s_i = act(norm(conv1x1(e_i)))            (skip_channels > 0)
    decoder  d_i = blocks(concat(s_i, up(d_(i+1))))  d_(levels+1) := e_levels, no upsample there
    head     sigmoid(conv1x1(up(d_1)))
The first decoder conv uses the model kernel, later ones are 1×1. A conv
followed by a norm has no bias since the norm removes the channel mean;
only the head and the flat MLP layers carry biases.
"""

import json
import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from input_encoding import EncodingTensor
from models import (
    ActivationKind, Architecture, HourglassConfig, MLPConfig, UpsampleMode,
    from_dict, to_dict
)
from tensor import (
    Parameter, Tensor, activation, channel_norm, concat, conv2d, pad_reflect, sigmoid, upsample
)
from utils.error_handler import ConfigError, DataError, ShapeError
from utils.logger import get_logger

logger = get_logger(__name__)

# FLOPs per element for non-conv ops
NORM_FLOPS = 7
SIGMOID_FLOPS = 4
ACTIVATION_FLOPS = {ActivationKind.LEAKY_RELU: 1, ActivationKind.SINE: 2, ActivationKind.GAUSSIAN: 3}
UPSAMPLE_FLOPS = {UpsampleMode.NEAREST: 0, UpsampleMode.BILINEAR: 6}

CHECKPOINT_MAGIC = b"PIPCKPT1"
CHECKPOINT_VERSION = 1

Padding = Tuple[int, int, int, int]


def conv_flops(c_in: int, c_out: int, kernel: int, out_h: int, out_w: int, bias: bool = True) -> int:
    """2 FLOPs per multiply-accumulate plus one bias add per output element."""
    macs = c_in * c_out * kernel * kernel * out_h * out_w
    return 2 * macs + (c_out * out_h * out_w if bias else 0)


class Conv:
    """k×k convolution with weight (and optional bias) drawn from U(±1/sqrt(fan_in))."""

    def __init__(self, name: str, c_in: int, c_out: int, kernel: int, stride: int, rng: np.random.Generator,
                 bias: bool = True):
        bound = 1.0 / np.sqrt(c_in * kernel * kernel)
        self.name = name
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        self.weight = Parameter(rng.uniform(-bound, bound, (c_out, c_in, kernel, kernel)), f"{name}.weight", dtype=np.float32)
        self.bias = Parameter(rng.uniform(-bound, bound, c_out), f"{name}.bias", dtype=np.float32) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride)

    def parameters(self) -> List[Parameter]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def flops(self, out_h: int, out_w: int) -> int:
        return conv_flops(self.c_in, self.c_out, self.kernel, out_h, out_w, bias=self.bias is not None)


class Norm:
    """Per-channel normalization with learned scale (init 1) and shift (init 0)."""

    def __init__(self, name: str, channels: int):
        self.name = name
        self.channels = channels
        self.scale = Parameter(np.ones(channels), f"{name}.scale", dtype=np.float32)
        self.shift = Parameter(np.zeros(channels), f"{name}.shift", dtype=np.float32)

    def __call__(self, x: Tensor) -> Tensor:
        return channel_norm(x, self.scale, self.shift)

    def parameters(self) -> List[Parameter]:
        return [self.scale, self.shift]


class HourglassModel:
    """Hourglass network f_θ; call ``forward(z)`` with a C×H×W input."""

    architecture = Architecture.HOURGLASS

    def __init__(self, config: Union[HourglassConfig, MLPConfig], seed: int = 0):
        config.validate()
        self.config = config
        self.seed = seed
        self._modules: List[Union[Conv, Norm]] = []
        self._build(np.random.default_rng(seed))
        self._check_names()

    # ------------------------------------------------------------ building
    def _add(self, module):
        self._modules.append(module)
        return module

    def _build(self, rng: np.random.Generator) -> None:
        cfg = self.config
        width, skip = cfg.width, cfg.skip_channels
        self.encoder: List[List[Tuple[Conv, Norm]]] = []
        self.skips: List[Optional[Tuple[Conv, Norm]]] = []
        self.decoder: List[List[Tuple[Conv, Norm]]] = []

        c_prev = cfg.in_channels
        for level in range(1, cfg.levels + 1):
            stage = []
            for block in range(1, cfg.blocks_per_level + 1):
                name = f"enc.level{level}.block{block}"
                conv = self._add(Conv(name, c_prev if block == 1 else width, width, cfg.kernel, 2 if block == 1 else 1, rng,
                                      bias=False))
                stage.append((conv, self._add(Norm(f"{name}.norm", width))))
            self.encoder.append(stage)

            if skip > 0:
                name = f"skip.level{level}"
                self.skips.append((self._add(Conv(name, width, skip, 1, 1, rng, bias=False)),
                                   self._add(Norm(f"{name}.norm", skip))))
            else:
                self.skips.append(None)

            stage = []
            for block in range(1, cfg.blocks_per_level + 1):
                name = f"dec.level{level}.block{block}"
                conv = self._add(Conv(name, skip + width if block == 1 else width, width,
                                      cfg.kernel if block == 1 else 1, 1, rng, bias=False))
                stage.append((conv, self._add(Norm(f"{name}.norm", width))))
            self.decoder.append(stage)
            c_prev = width

        self.head = self._add(Conv("head", width, cfg.out_channels, 1, 1, rng))

    def _check_names(self) -> None:
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ConfigError("parameter names must be unique within a model")

    # ------------------------------------------------------------ accessors
    def parameters(self) -> List[Parameter]:
        return [p for module in self._modules for p in module.parameters()]

    def named_parameters(self) -> Dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def convs(self) -> List[Conv]:
        return [m for m in self._modules if isinstance(m, Conv)]

    @property
    def divisor(self) -> int:
        """Spatial sizes must be multiples of this."""
        return 2 ** self.config.levels

    def required_padding(self, height: int, width: int) -> Tuple[int, int, int, int]:
        """(top, bottom, left, right) reflection padding reaching the next valid size."""
        d = self.divisor
        extra_h = -height % d
        extra_w = -width % d
        return extra_h // 2, extra_h - extra_h // 2, extra_w // 2, extra_w - extra_w // 2

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 3:
            raise ShapeError(f"expected a C×H×W input, got shape {x.shape}")
        if x.shape[0] != self.config.in_channels:
            raise ShapeError(f"input shape {x.shape} does not match in_channels={self.config.in_channels}")
        height, width = x.shape[1:]
        if height % self.divisor or width % self.divisor:
            top, bottom, left, right = self.required_padding(height, width)
            raise ShapeError(
                f"spatial size {height}x{width} is not divisible by {self.divisor}; "
                f"pad by (top={top}, bottom={bottom}, left={left}, right={right}) "
                f"to {height + top + bottom}x{width + left + right}"
            )

    # -------------------------------------------------------------- forward
    def _block(self, x: Tensor, conv: Conv, norm: Optional[Norm]) -> Tensor:
        x = conv(x)
        if norm is not None:
            x = norm(x)
        return activation(x, self.config.activation, self.config.activation_param)

    def forward(self, z: Union[Tensor, EncodingTensor]) -> Tensor:
        x = z.tensor if isinstance(z, EncodingTensor) else z
        self.check_input(x)
        mode = self.config.upsample_mode

        features = []
        for stage in self.encoder:
            for conv, norm in stage:
                x = self._block(x, conv, norm)
            features.append(x)

        d = None
        for level in range(self.config.levels, 0, -1):
            e = features[level - 1]
            up = e if d is None else upsample(d, 2, mode)
            skip = self.skips[level - 1]
            d = concat([self._block(e, *skip), up], axis=0) if skip is not None else up
            for conv, norm in self.decoder[level - 1]:
                d = self._block(d, conv, norm)

        return sigmoid(self.head(upsample(d, 2, mode)))

    __call__ = forward

    # ----------------------------------------------------------- accounting
    def flops(self, height: int, width: int) -> int:
        cfg = self.config
        act = ACTIVATION_FLOPS[cfg.activation]
        up_cost = UPSAMPLE_FLOPS[cfg.upsample_mode]
        total = 0
        sizes = []
        h, w = height, width
        for stage in self.encoder:
            for conv, _ in stage:
                h, w = -(-h // conv.stride), -(-w // conv.stride)
                total += conv.flops(h, w) + (NORM_FLOPS + act) * conv.c_out * h * w
            sizes.append((h, w))

        for level in range(cfg.levels, 0, -1):
            h, w = sizes[level - 1]
            if level < cfg.levels:
                total += up_cost * cfg.width * h * w
            if self.skips[level - 1] is not None:
                total += self.skips[level - 1][0].flops(h, w) + (NORM_FLOPS + act) * cfg.skip_channels * h * w
            for conv, _ in self.decoder[level - 1]:
                total += conv.flops(h, w) + (NORM_FLOPS + act) * conv.c_out * h * w

        h, w = sizes[0][0] * 2, sizes[0][1] * 2
        total += up_cost * cfg.width * h * w
        total += self.head.flops(h, w) + SIGMOID_FLOPS * cfg.out_channels * h * w
        return total

    def describe(self) -> List[Dict[str, object]]:
        """Layer table: name, kernel, stride, channels, parameter count."""
        rows = []
        for module in self._modules:
            if isinstance(module, Conv):
                rows.append({"layer": module.name, "type": f"conv{module.kernel}x{module.kernel}",
                             "stride": module.stride, "c_in": module.c_in, "c_out": module.c_out,
                             "params": sum(p.size for p in module.parameters())})
            else:
                rows.append({"layer": module.name, "type": "norm", "stride": 1, "c_in": module.channels,
                             "c_out": module.channels, "params": 2 * module.channels})
        return rows

    def config_dict(self) -> Dict[str, object]:
        return {"architecture": self.architecture.value, "seed": self.seed, "config": to_dict(self.config)}


class FlatMLPModel(HourglassModel):
    """Per-pixel MLP: no resampling, no skips, no normalization."""

    architecture = Architecture.FLAT_MLP

    def _build(self, rng: np.random.Generator) -> None:
        cfg = self.config
        self.layers: List[Conv] = []
        c_prev = cfg.in_channels
        for index in range(1, cfg.depth + 1):
            self.layers.append(self._add(Conv(f"mlp.layer{index}", c_prev, cfg.width, 1, 1, rng)))
            c_prev = cfg.width
        self.head = self._add(Conv("head", c_prev, cfg.out_channels, 1, 1, rng))

    @property
    def divisor(self) -> int:
        return 1

    def forward(self, z: Union[Tensor, EncodingTensor]) -> Tensor:
        x = z.tensor if isinstance(z, EncodingTensor) else z
        self.check_input(x)
        for conv in self.layers:
            x = self._block(x, conv, None)
        return sigmoid(self.head(x))

    __call__ = forward

    def flops(self, height: int, width: int) -> int:
        act = ACTIVATION_FLOPS[self.config.activation]
        pixels = height * width
        total = sum(conv.flops(height, width) + act * conv.c_out * pixels for conv in self.layers)
        return total + self.head.flops(height, width) + SIGMOID_FLOPS * self.config.out_channels * pixels


# ---------------------------------------------------------------------------
# module-level API
# ---------------------------------------------------------------------------
def build_hourglass(config: HourglassConfig, seed: int = 0) -> HourglassModel:
    model = HourglassModel(config, seed=seed)
    logger.debug(f"Built hourglass (kernel={config.kernel}, levels={config.levels}) with {count_params(model)} parameters")
    return model


def build_flat_mlp(depth: int = 4, width: int = 256, in_channels: int = 32, out_channels: int = 3,
                   activation_kind: ActivationKind = ActivationKind.LEAKY_RELU,
                   activation_param: Optional[float] = None, seed: int = 0) -> HourglassModel:
    config = MLPConfig(depth=depth, width=width, in_channels=in_channels, out_channels=out_channels,
                       activation=activation_kind, activation_param=activation_param)
    return FlatMLPModel(config, seed=seed)


def build_model(config: Union[HourglassConfig, MLPConfig], seed: int = 0) -> HourglassModel:
    """Dispatch on the config type."""
    if isinstance(config, MLPConfig):
        return FlatMLPModel(config, seed=seed)
    return build_hourglass(config, seed=seed)


def forward(model: HourglassModel, z: Union[Tensor, EncodingTensor], padding: Optional[Padding] = None) -> Tensor:
    """
    Run the model on a C×H×W input. With ``padding`` (top, bottom, left,
    right) the input is reflection-padded first and the output cropped back.
    """
    x = z.tensor if isinstance(z, EncodingTensor) else z
    if not padding or not any(padding):
        return model.forward(x)
    top, bottom, left, right = padding
    height, width = x.shape[-2:]
    out = model.forward(pad_reflect(x, top, bottom, left, right))
    return out[:, top:top + height, left:left + width]


def forward_video(model: HourglassModel, z: Union[Tensor, EncodingTensor],
                  padding: Optional[Padding] = None) -> List[Tensor]:
    """Run the 2D model on every frame of a C×T×H×W input with shared weights."""
    x = z.tensor if isinstance(z, EncodingTensor) else z
    if x.ndim != 4:
        raise ShapeError(f"expected a C×T×H×W input, got shape {x.shape}")
    return [forward(model, x[:, t], padding) for t in range(x.shape[1])]


def count_params(model: HourglassModel) -> int:
    return int(sum(p.size for p in model.parameters()))


def count_layers(model: HourglassModel) -> int:
    """Number of conv layers (norms and activations are not counted)."""
    return len(model.convs())


def count_flops(model: HourglassModel, height: int, width: int) -> int:
    return int(model.flops(height, width))


# ---------------------------------------------------------------------------
# checkpoint codec
# ---------------------------------------------------------------------------
def save_checkpoint(model: HourglassModel, path: Union[str, Path]) -> Path:
    """
    Little-endian layout: magic, u32 version, u32 json length + config json,
    u32 parameter count, then per parameter u16 name length, name, u8 ndim,
    u32 dims and float32 data.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config_blob = json.dumps(model.config_dict(), sort_keys=True).encode("utf-8")
    params = model.parameters()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(config_blob)))
        f.write(config_blob)
        f.write(struct.pack("<I", len(params)))
        for param in params:
            name = param.name.encode("utf-8")
            f.write(struct.pack("<H", len(name)))
            f.write(name)
            f.write(struct.pack("<B", param.ndim))
            f.write(struct.pack(f"<{param.ndim}I", *param.shape))
            f.write(param.data.astype("<f4").tobytes())
    logger.info(f"Saved checkpoint with {len(params)} parameters to {path}")
    return path


def _read(f, fmt: str):
    size = struct.calcsize(fmt)
    blob = f.read(size)
    if len(blob) != size:
        raise DataError("checkpoint is truncated")
    return struct.unpack(fmt, blob)


def load_checkpoint(path: Union[str, Path]) -> HourglassModel:
    """Rebuild the model from the config block and restore every parameter."""
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise DataError(f"{path} is not a model checkpoint")
        (version,) = _read(f, "<I")
        if version != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        (length,) = _read(f, "<I")
        meta = json.loads(f.read(length).decode("utf-8"))
        architecture = Architecture(meta["architecture"])
        config_cls = MLPConfig if architecture is Architecture.FLAT_MLP else HourglassConfig
        model = build_model(from_dict(config_cls, meta["config"]), seed=int(meta.get("seed", 0)))

        named = model.named_parameters()
        (count,) = _read(f, "<I")
        if count != len(named):
            raise DataError(f"checkpoint holds {count} parameters, model expects {len(named)}")
        for _ in range(count):
            (name_len,) = _read(f, "<H")
            name = f.read(name_len).decode("utf-8")
            (ndim,) = _read(f, "<B")
            shape = _read(f, f"<{ndim}I")
            if name not in named:
                raise DataError(f"unknown parameter '{name}' in checkpoint")
            if tuple(shape) != named[name].shape:
                raise ShapeError(f"parameter '{name}': checkpoint shape {tuple(shape)} does not match model shape {named[name].shape}")
            size = int(np.prod(shape)) * 4
            blob = f.read(size)
            if len(blob) != size:
                raise DataError("checkpoint is truncated")
            named[name].data[...] = np.frombuffer(blob, dtype="<f4").reshape(shape)
    return model
