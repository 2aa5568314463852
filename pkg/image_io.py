"""
PNG and frame-directory IO for the PIP Restoration Toolkit

Images are 8-bit RGB PNGs on disk and float32 3×H×W arrays in [0, 1] in
memory. Other PNG flavours (grayscale, palette, alpha, 16-bit) are
converted to 8-bit RGB with a warning.
"""

from pathlib import Path
from typing import List, Union

import numpy as np
from PIL import Image

from models import FrameSequence
from tensor import Tensor
from utils.error_handler import DataError, ShapeError
from utils.logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]
SIXTEEN_BIT_MODES = ("I;16", "I;16B", "I;16L", "I")


def _to_rgb_array(img: Image.Image, path: Path) -> np.ndarray:
    if img.mode == "RGB":
        return np.asarray(img, dtype=np.uint8)
    if img.mode in SIXTEEN_BIT_MODES:
        logger.warning(f"{path.name}: 16-bit PNG converted to 8-bit RGB")
        gray = (np.asarray(img, dtype=np.uint32) >> 8).clip(0, 255).astype(np.uint8)
        return np.repeat(gray[:, :, None], 3, axis=2)
    logger.warning(f"{path.name}: {img.mode} PNG converted to 8-bit RGB")
    return np.asarray(img.convert("RGB"), dtype=np.uint8)


def load_png(path: PathLike) -> Tensor:
    """Read a PNG as a 3×H×W float32 tensor in [0, 1]."""
    path = Path(path)
    with Image.open(path) as img:
        img.load()
        if img.format != "PNG":
            logger.warning(f"{path.name}: {img.format} file read through the PNG path")
        rgb = _to_rgb_array(img, path)
    return Tensor(rgb.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def to_uint8(image) -> np.ndarray:
    """H×W×3 uint8 view of a 3×H×W (or 1×H×W or H×W) image in [0, 1]."""
    data = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float64)
    if data.ndim == 2:
        data = data[None]
    if data.ndim != 3 or data.shape[0] not in (1, 3):
        raise ShapeError(f"cannot save an image of shape {data.shape}; expected 3×H×W, 1×H×W or H×W")
    if data.shape[0] == 1:
        data = np.repeat(data, 3, axis=0)
    return np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_png(image, path: PathLike) -> Path:
    """Write an image in [0, 1] as an 8-bit RGB PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format="PNG")
    return path


def load_frames(directory: PathLike, frame_rate: float = None) -> FrameSequence:
    """Read every PNG of a directory in lexicographic order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"frame directory {directory} does not exist")
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise DataError(f"frame directory {directory} contains no PNG files")
    frames = [load_png(p).data for p in paths]
    sequence = FrameSequence(frames=frames, frame_rate=frame_rate, names=[p.name for p in paths])
    logger.info(f"Loaded {len(sequence)} frames of shape {sequence.shape} from {directory}")
    return sequence


def save_frames(sequence: FrameSequence, directory: PathLike, prefix: str = "frame_") -> List[Path]:
    """Write frames as zero-padded, numbered PNGs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    digits = max(4, len(str(len(sequence) - 1)))
    return [save_png(frame, directory / f"{prefix}{index:0{digits}d}.png") for index, frame in enumerate(sequence.frames)]


def load_mask(path: PathLike) -> np.ndarray:
    """Binary H×W mask from a PNG: bright pixels (≥ 0.5) are known."""
    image = load_png(path).data
    return (image.mean(axis=0) >= 0.5).astype(np.float32)
