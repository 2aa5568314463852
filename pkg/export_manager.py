"""
Export Manager for the PIP Restoration Toolkit

Writes run artifacts: metrics JSON, CSV curves and tables, PNG images,
snapshot series and frame directories. Every export is recorded in an
export history; failures are classified by the error handler and then
re-raised so the command exits with a file error.
"""

import json
import math
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from image_io import save_frames, save_png
from models import FrameSequence
from network import save_checkpoint
from utils.error_handler import ErrorHandler
from utils.logger import get_logger, log_performance

PathLike = Union[str, Path]
HISTORY_LIMIT = 100


def to_json_value(value: Any) -> Any:
    """Plain JSON value: numpy scalars unwrapped, NaN/Inf become null."""
    if isinstance(value, dict):
        return {str(k): to_json_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_json_value(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_json_value(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, Enum):
        return value.value
    return value


class RunExporter:
    """Writes the artifacts of one or more runs."""

    def __init__(self, error_handler: ErrorHandler):
        self.error_handler = error_handler
        self.logger = get_logger(__name__)
        self.export_history: List[Dict[str, Any]] = []

    def _record(self, kind: str, filepath: Path, success: bool, started: datetime) -> None:
        self.export_history.append({
            "timestamp": started,
            "kind": kind,
            "filepath": str(filepath),
            "success": success,
            "file_size_kb": self._get_file_size(filepath) if success else 0.0,
            "execution_time": (datetime.now() - started).total_seconds(),
        })
        if len(self.export_history) > HISTORY_LIMIT:
            self.export_history = self.export_history[-HISTORY_LIMIT:]

    def _export(self, kind: str, filepath: PathLike, writer) -> Path:
        filepath = Path(filepath)
        started = datetime.now()
        try:
            filepath.parent.mkdir(parents=True, exist_ok=True)
            writer(filepath)
        except Exception as e:
            self._record(kind, filepath, False, started)
            response = self.error_handler.handle_file_error(e, str(filepath), f"{kind} export")
            self.logger.error(f"Failed to write {kind}: {response.message}")
            raise
        self._record(kind, filepath, True, started)
        self.logger.debug(f"Wrote {kind}: {filepath}")
        return filepath

    def export_metrics(self, metrics: Dict[str, Any], filepath: PathLike) -> Path:
        """Write metrics as sorted, indented JSON (same input gives identical bytes)."""
        def write(path: Path) -> None:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(to_json_value(metrics), f, indent=2, sort_keys=True, allow_nan=False)
                f.write("\n")
        return self._export("metrics", filepath, write)

    def export_table(self, table: pd.DataFrame, filepath: PathLike) -> Path:
        """Write a DataFrame as CSV without the index."""
        return self._export("table", filepath, lambda path: table.to_csv(path, index=False, na_rep=""))

    def export_curves(self, curves: pd.DataFrame, filepath: PathLike) -> Path:
        return self._export("curves", filepath, lambda path: curves.to_csv(path, index=False, na_rep=""))

    def export_image(self, image, filepath: PathLike) -> Path:
        return self._export("image", filepath, lambda path: save_png(image, path))

    def export_video(self, video: np.ndarray, directory: PathLike, prefix: str = "frame_") -> Path:
        """Write a C×T×H×W array as a numbered frame directory."""
        sequence = FrameSequence.from_array(np.asarray(video))
        return self._export("frames", directory, lambda path: save_frames(sequence, path, prefix=prefix))

    def export_checkpoint(self, model, filepath: PathLike) -> Path:
        return self._export("checkpoint", filepath, lambda path: save_checkpoint(model, path))

    def export_snapshots(self, snapshots: Sequence[Tuple[int, np.ndarray]], directory: PathLike) -> List[Path]:
        """One PNG per (iteration, image) snapshot; video snapshots keep their first frame."""
        directory = Path(directory)
        paths = []
        with log_performance(f"Exporting {len(snapshots)} snapshots to {directory}"):
            for iteration, image in snapshots:
                image = np.asarray(image)
                if image.ndim == 4:
                    image = image[:, 0]
                paths.append(self.export_image(image, directory / f"iter_{iteration:06d}.png"))
        return paths

    def get_export_statistics(self) -> Dict[str, Any]:
        """Get export statistics and history."""
        if not self.export_history:
            return {"message": "No exports performed yet"}

        successful = [record for record in self.export_history if record["success"]]
        kind_counts: Dict[str, int] = {}
        for record in self.export_history:
            kind_counts[record["kind"]] = kind_counts.get(record["kind"], 0) + 1

        return {
            "total_exports": len(self.export_history),
            "successful_exports": len(successful),
            "failed_exports": len(self.export_history) - len(successful),
            "total_file_size_kb": round(sum(record["file_size_kb"] for record in successful), 2),
            "kind_breakdown": kind_counts,
            "recent_exports": self.export_history[-10:],
        }

    def _get_file_size(self, filepath: Path) -> float:
        """File size in KB; directories count their files."""
        try:
            if filepath.is_dir():
                return sum(p.stat().st_size for p in filepath.iterdir() if p.is_file()) / 1024
            if filepath.exists():
                return filepath.stat().st_size / 1024
        except OSError:
            pass
        return 0.0

    def clear_export_history(self) -> None:
        self.export_history.clear()
        self.logger.info("Export history cleared")


def read_metrics(filepath: PathLike) -> Optional[Dict[str, Any]]:
    """Load a metrics.json written by ``RunExporter.export_metrics``."""
    filepath = Path(filepath)
    if not filepath.exists():
        return None
    with open(filepath, "r", encoding="utf-8") as f:
        return json.load(f)
