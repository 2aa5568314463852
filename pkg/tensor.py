"""
Tensor Core for the PIP Restoration Toolkit

Minimal reverse-mode automatic differentiation over dense numpy arrays with
exactly the operators the hourglass and per-pixel MLP models need. Images
are laid out C×H×W; there is no batch axis (batch size is always one).

Every op returns a new Tensor whose ``_backward`` closure maps the output
gradient to one gradient per parent. ``backward()`` walks the graph once in
reverse topological order, summing gradients of shared subexpressions.
"""

from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.error_handler import NumericalError, ShapeError
from utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_DTYPE = np.float32
NORM_EPS = 1e-5

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Dense n-dimensional float array with an optional gradient."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        array = np.asarray(data)
        if dtype is None:
            dtype = array.dtype if array.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(array, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence['Tensor'], backward: BackwardFn, op: str) -> 'Tensor':
        """Wrap the result of an op; the graph is only kept when a parent needs gradients."""
        parents = tuple(parents)
        out = cls(data, dtype=data.dtype)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
            out.op = op
        return out

    # ------------------------------------------------------------------ info
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        """Copy of the underlying array."""
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> 'Tensor':
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    # -------------------------------------------------------------- autograd
    def _topological_order(self) -> List['Tensor']:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Populate ``grad`` of every reachable leaf that requires gradients."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar tensor, got shape {self.shape}")
        if not self.requires_grad:
            return

        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topological_order()):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad

    # ------------------------------------------------------------ arithmetic
    def __add__(self, other) -> 'Tensor':
        other = _as_tensor(other, self)
        _require_same_shape("add", self, other)
        return Tensor.from_op(self.data + other.data, (self, other), lambda g: (g, g), "add")

    __radd__ = __add__

    def __sub__(self, other) -> 'Tensor':
        other = _as_tensor(other, self)
        _require_same_shape("sub", self, other)
        return Tensor.from_op(self.data - other.data, (self, other), lambda g: (g, -g), "sub")

    def __neg__(self) -> 'Tensor':
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other) -> 'Tensor':
        if isinstance(other, (int, float, np.floating)):
            scale = self.data.dtype.type(other)
            return Tensor.from_op(self.data * scale, (self,), lambda g: (g * scale,), "scale")
        other = _as_tensor(other, self)
        _require_same_shape("mul", self, other)
        a, b = self.data, other.data
        return Tensor.from_op(a * b, (self, other), lambda g: (g * b, g * a), "mul")

    __rmul__ = __mul__

    def sum(self) -> 'Tensor':
        shape = self.shape
        return Tensor.from_op(np.asarray(self.data.sum(), dtype=self.dtype), (self,),
                              lambda g: (np.broadcast_to(g, shape).astype(g.dtype, copy=True),), "sum")

    def mean(self) -> 'Tensor':
        shape, n = self.shape, self.size
        return Tensor.from_op(np.asarray(self.data.mean(), dtype=self.dtype), (self,),
                              lambda g: (np.full(shape, g / n, dtype=g.dtype),), "mean")

    def __getitem__(self, index) -> 'Tensor':
        shape = self.shape
        basic = _is_basic_index(index)

        def backward(g):
            full = np.zeros(shape, dtype=g.dtype)
            if basic:
                full[index] += g
            else:
                np.add.at(full, index, g)
            return (full,)

        return Tensor.from_op(np.array(self.data[index]), (self,), backward, "index")


class Parameter(Tensor):
    """Trainable tensor with a unique dotted name, e.g. ``enc.level3.block1.weight``."""

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    @property
    def tensor(self) -> Tensor:
        return self

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"


# ---------------------------------------------------------------- helpers
def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape {a.shape} does not match shape {b.shape}")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def _kind_name(kind) -> str:
    return str(getattr(kind, "value", kind)).lower()


def check_finite(tensor: Tensor, context: str = "") -> None:
    """Raise NumericalError if the tensor holds NaN or Inf."""
    if not np.all(np.isfinite(tensor.data)):
        bad = int(np.size(tensor.data) - np.count_nonzero(np.isfinite(tensor.data)))
        raise NumericalError(f"{bad} non-finite values in tensor of shape {tensor.shape}{f' ({context})' if context else ''}")


# ------------------------------------------------------------ convolution
def _reflect_pad1_grad(grad_padded: np.ndarray) -> np.ndarray:
    """Fold the gradient of a 1-pixel reflection pad back onto the interior."""
    g = grad_padded.copy()
    g[..., 2, :] += g[..., 0, :]
    g[..., -3, :] += g[..., -1, :]
    g[..., :, 2] += g[..., :, 0]
    g[..., :, -3] += g[..., :, -1]
    return g[..., 1:-1, 1:-1]


def conv2d(input: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """
    Cross-correlate a C_in×H×W input with a C_out×C_in×k×k kernel.

    k is 1 or 3; 3×3 kernels use reflection padding of one pixel so the
    output is C_out×⌈H/s⌉×⌈W/s⌉ for both kernel sizes.
    """
    if input.ndim != 3 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected C×H×W input and 4-D weight, got input shape {input.shape} and weight shape {weight.shape}")
    c_in, height, width = input.shape
    c_out, w_in, kh, kw = weight.shape
    if w_in != c_in:
        raise ShapeError(f"conv2d: input shape {input.shape} does not match weight shape {weight.shape}")
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"conv2d: only 1x1 and 3x3 kernels are supported, got weight shape {weight.shape}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match weight shape {weight.shape}")

    x = input.data
    k = kh
    out_h = (height + stride - 1) // stride
    out_w = (width + stride - 1) // stride

    if k == 1:
        cols = x[:, ::stride, ::stride].reshape(c_in, out_h * out_w)
        wmat = weight.data.reshape(c_out, c_in)
    else:
        if height < 2 or width < 2:
            raise ShapeError(f"conv2d: reflection padding needs at least 2x2 input, got shape {input.shape}")
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
        patches = np.empty((c_in, 3, 3, out_h, out_w), dtype=x.dtype)
        for dy in range(3):
            for dx in range(3):
                patches[:, dy, dx] = padded[:, dy:dy + height:stride, dx:dx + width:stride]
        cols = patches.reshape(c_in * 9, out_h * out_w)
        wmat = weight.data.reshape(c_out, c_in * 9)

    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(c_out, out_h, out_w)

    def backward(g):
        g2 = g.reshape(c_out, out_h * out_w)
        grad_w = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        grad_x = None
        if input.requires_grad:
            gcols = wmat.T @ g2
            if k == 1:
                grad_x = np.zeros_like(x)
                grad_x[:, ::stride, ::stride] = gcols.reshape(c_in, out_h, out_w)
            else:
                gpatch = gcols.reshape(c_in, 3, 3, out_h, out_w)
                grad_padded = np.zeros((c_in, height + 2, width + 2), dtype=g.dtype)
                for dy in range(3):
                    for dx in range(3):
                        grad_padded[:, dy:dy + height:stride, dx:dx + width:stride] += gpatch[:, dy, dx]
                grad_x = _reflect_pad1_grad(grad_padded)
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g2.sum(axis=1) if bias.requires_grad else None)
        return grads

    parents = (input, weight) if bias is None else (input, weight, bias)
    return Tensor.from_op(out, parents, backward, f"conv{k}x{k}/s{stride}")


# ------------------------------------------------------------- resampling
def resample(input: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Apply a separable linear operator: out[c] = rows @ input[c] @ cols.T."""
    if input.ndim != 3:
        raise ShapeError(f"resample: expected C×H×W input, got shape {input.shape}")
    _, height, width = input.shape
    if rows.shape[1] != height or cols.shape[1] != width:
        raise ShapeError(f"resample: operator shapes {rows.shape}/{cols.shape} do not match input shape {input.shape}")
    rows = rows.astype(input.dtype, copy=False)
    cols = cols.astype(input.dtype, copy=False)
    out = np.matmul(rows, input.data @ cols.T)

    def backward(g):
        return (np.matmul(rows.T, g) @ cols,)

    return Tensor.from_op(out, (input,), backward, "resample")


def bilinear_matrix(in_size: int, out_size: int) -> np.ndarray:
    """
    Linear interpolation matrix (out_size×in_size) with the align-corners-false
    convention: output pixel o samples input coordinate (o + 0.5)·in/out − 0.5,
    clamped to the valid range.
    """
    src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    matrix = np.zeros((out_size, in_size))
    rows = np.arange(out_size)
    np.add.at(matrix, (rows, lo), 1.0 - frac)
    np.add.at(matrix, (rows, hi), frac)
    return matrix


def upsample(input: Tensor, factor: int, mode="bilinear") -> Tensor:
    """Upsample the spatial axes of a C×H×W tensor by an integer factor."""
    if factor < 2:
        raise ValueError(f"upsample factor must be >= 2, got {factor}")
    if input.ndim != 3:
        raise ShapeError(f"upsample: expected C×H×W input, got shape {input.shape}")
    mode = _kind_name(mode)
    channels, height, width = input.shape

    if mode == "nearest":
        out = input.data.repeat(factor, axis=1).repeat(factor, axis=2)

        def backward(g):
            return (g.reshape(channels, height, factor, width, factor).sum(axis=(2, 4)),)

        return Tensor.from_op(out, (input,), backward, "upsample_nearest")
    if mode == "bilinear":
        return resample(input, bilinear_matrix(height, height * factor), bilinear_matrix(width, width * factor))
    raise ValueError(f"unknown upsample mode: {mode}")


def pad_reflect(input: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Reflection-pad the spatial axes of a C×H×W tensor."""
    if top == bottom == left == right == 0:
        return input
    if input.ndim != 3:
        raise ShapeError(f"pad_reflect: expected C×H×W input, got shape {input.shape}")
    _, height, width = input.shape
    rows = np.pad(np.arange(height), (top, bottom), mode="reflect")
    cols = np.pad(np.arange(width), (left, right), mode="reflect")
    out = input.data[:, rows][:, :, cols]
    row_map = np.eye(height, dtype=input.dtype)[rows]
    col_map = np.eye(width, dtype=input.dtype)[cols]

    def backward(g):
        return (np.matmul(row_map.T, g) @ col_map,)

    return Tensor.from_op(out, (input,), backward, "pad_reflect")


# ------------------------------------------------------------ activations
ACTIVATION_DEFAULTS = {"leaky_relu": 0.2, "sine": 1.0, "gaussian": 1.0}


def activation(input: Tensor, kind="leaky_relu", param: Optional[float] = None) -> Tensor:
    """
    Elementwise nonlinearity.

    leaky_relu: param is the negative slope; sine: sin(ω·x) with ω = param;
    gaussian: exp(−x²/(2a²)) with a = param.
    """
    kind = _kind_name(kind)
    if kind not in ACTIVATION_DEFAULTS:
        raise ValueError(f"unknown activation: {kind}")
    p = ACTIVATION_DEFAULTS[kind] if param is None else float(param)
    x = input.data
    dt = x.dtype.type

    if kind == "leaky_relu":
        slope = np.where(x > 0, dt(1.0), dt(p)).astype(x.dtype)
        out = x * slope
        return Tensor.from_op(out, (input,), lambda g: (g * slope,), "leaky_relu")
    if kind == "sine":
        omega = dt(p)
        out = np.sin(omega * x)
        deriv = omega * np.cos(omega * x)
        return Tensor.from_op(out, (input,), lambda g: (g * deriv,), "sine")

    width = dt(p)
    out = np.exp(-(x * x) / (dt(2.0) * width * width))
    deriv = -(x / (width * width)) * out
    return Tensor.from_op(out, (input,), lambda g: (g * deriv,), "gaussian")


def sigmoid(input: Tensor) -> Tensor:
    """Logistic function, kept one ulp inside (0, 1)."""
    x = input.data
    eps = np.finfo(x.dtype).eps
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    ex = np.exp(x[~positive])
    out[~positive] = ex / (1.0 + ex)
    np.clip(out, eps, 1.0 - eps, out=out)
    deriv = out * (1.0 - out)
    return Tensor.from_op(out, (input,), lambda g: (g * deriv,), "sigmoid")


# ---------------------------------------------------------- normalization
def channel_norm(input: Tensor, scale: Tensor, shift: Tensor, eps: float = NORM_EPS) -> Tensor:
    """
    Per-channel normalization with single-instance spatial statistics:
    (x − mean) / (std + eps) · scale + shift.
    """
    if input.ndim != 3:
        raise ShapeError(f"channel_norm: expected C×H×W input, got shape {input.shape}")
    channels = input.shape[0]
    if scale.shape != (channels,) or shift.shape != (channels,):
        raise ShapeError(f"channel_norm: input shape {input.shape} does not match scale shape {scale.shape} / shift shape {shift.shape}")

    x = input.data
    count = x.shape[1] * x.shape[2]
    centered = x - x.mean(axis=(1, 2), keepdims=True)
    std = np.sqrt((centered * centered).mean(axis=(1, 2), keepdims=True))
    denom = std + x.dtype.type(eps)
    inv_denom = 1.0 / denom
    xhat = centered * inv_denom
    # denom / std, taken as 0 for constant channels (their xhat is 0 anyway)
    ratio = np.divide(denom, std, out=np.zeros_like(std), where=std > 0)
    gamma = scale.data[:, None, None]
    out = xhat * gamma + shift.data[:, None, None]

    def backward(g):
        grad_scale = (g * xhat).sum(axis=(1, 2)) if scale.requires_grad else None
        grad_shift = g.sum(axis=(1, 2)) if shift.requires_grad else None
        grad_x = None
        if input.requires_grad:
            dxhat = g * gamma
            grad_x = (inv_denom / count) * (
                count * dxhat
                - dxhat.sum(axis=(1, 2), keepdims=True)
                - ratio * xhat * (dxhat * xhat).sum(axis=(1, 2), keepdims=True)
            )
        return grad_x, grad_scale, grad_shift

    return Tensor.from_op(out, (input, scale, shift), backward, "channel_norm")


# ------------------------------------------------------------- structure
def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along an axis."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or t.shape[:axis] + t.shape[axis + 1:] != tensors[0].shape[:axis] + tensors[0].shape[axis + 1:]:
            raise ShapeError(f"concat: shape {t.shape} does not match shape {tensors[0].shape} off axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return [np.ascontiguousarray(part) for part in np.split(g, splits, axis=axis)]

    return Tensor.from_op(out, tensors, backward, "concat")


# ----------------------------------------------------------------- losses
def _target_array(target, like: Tensor) -> np.ndarray:
    return target.data if isinstance(target, Tensor) else np.asarray(target, dtype=like.dtype)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared differences; the target may be a Tensor or an array."""
    t = _target_array(target, pred)
    if pred.shape != t.shape:
        raise ShapeError(f"mse_loss: prediction shape {pred.shape} does not match target shape {t.shape}")
    diff = pred.data - t
    count = diff.size
    value = np.asarray(np.mean(diff * diff), dtype=pred.dtype)

    def backward(g):
        grad = (2.0 / count) * diff * g
        return (grad, -grad) if isinstance(target, Tensor) else (grad,)

    parents = (pred, target) if isinstance(target, Tensor) else (pred,)
    return Tensor.from_op(value, parents, backward, "mse")


def masked_mse_loss(pred: Tensor, target, mask: np.ndarray) -> Tensor:
    """
    Mean squared error over known pixels only. ``mask`` is H×W (or the full
    prediction shape) with 1 for known pixels and 0 for missing ones.
    """
    t = _target_array(target, pred)
    if pred.shape != t.shape:
        raise ShapeError(f"masked_mse_loss: prediction shape {pred.shape} does not match target shape {t.shape}")
    try:
        weights = np.broadcast_to(np.asarray(mask, dtype=pred.dtype), pred.shape)
    except ValueError:
        raise ShapeError(f"masked_mse_loss: mask shape {np.shape(mask)} does not match prediction shape {pred.shape}") from None
    known = float(weights.sum())
    if known <= 0:
        raise ShapeError("masked_mse_loss: mask has no known pixels")
    diff = (pred.data - t) * weights
    value = np.asarray(np.sum(diff * diff) / known, dtype=pred.dtype)

    def backward(g):
        return ((2.0 / known) * diff * weights * g,)

    return Tensor.from_op(value, (pred,), backward, "masked_mse")


def stack_data(tensors: Iterable[Tensor], axis: int = 1) -> np.ndarray:
    """Stack tensor values (no gradient), e.g. per-frame outputs into C×T×H×W."""
    return np.stack([t.data for t in tensors], axis=axis)
