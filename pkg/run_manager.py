"""
Run Manager for the PIP Restoration Toolkit

Turns a resolved RunConfig into a run directory
(``<command>-<timestamp>-seed<k>``) holding the resolved ``run.cfg``, a
``run.log``, ``metrics.json`` and the command's CSV and PNG outputs.
Batch mode runs several config files, optionally in worker processes.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from analysis import convergence_order, fmax_sweep, is_ordered, run_ablation, run_spectral_probe
from config import AppConfig, RunConfig
from export_manager import RunExporter
from image_io import load_frames, load_mask, load_png
from input_encoding import build_encoding, contact_sheet, describe_channels
from linear_theory import prop1_suite, summarize_suite
from metrics import psnr, ssim, ssim3d_windowed
from models import Architecture, RunResult, TaskSpec, TrainConfig, create_denoise_task, to_dict
from network import HourglassModel, build_model, count_flops, count_layers, count_params
from tasks import degrade, random_mask, upscale_bicubic, upscale_bilinear
from trainer import restore_framewise, train
from utils.error_handler import ConfigError, ErrorHandler
from utils.logger import add_file_handler, get_logger, log_performance, remove_handler, setup_logging

PathLike = Union[str, Path]


@dataclass
class RunRecord:
    """What one executed command produced."""
    command: str
    run_dir: Path
    metrics: Dict[str, Any] = field(repr=False)
    passed: bool = True


class RunManager:
    """Creates run directories and executes toolkit commands inside them."""

    def __init__(self, config: AppConfig, error_handler: ErrorHandler):
        self.config = config
        self.error_handler = error_handler
        self.logger = get_logger(__name__)
        self.exporter = RunExporter(error_handler)
        self.run_history: List[RunRecord] = []
        self.handlers: Dict[str, Callable[[RunConfig, Path], Tuple[Dict[str, Any], bool]]] = {
            "denoise": self._run_denoise,
            "sr": self._run_sr,
            "inpaint": self._run_inpaint,
            "video-denoise": self._run_video_denoise,
            "spectral-bias": self._run_spectral_bias,
            "fmax-sweep": self._run_fmax_sweep,
            "ablation": self._run_ablation,
            "prop1-check": self._run_prop1_check,
            "count-params": self._run_count_params,
            "encode-dump": self._run_encode_dump,
        }

    # -----------------------------------------------------------------------
    # run directories
    # -----------------------------------------------------------------------
    def output_root(self, run_config: RunConfig) -> Path:
        return Path(run_config.io.output_root) if run_config.io.output_root else self.config.output_root

    def create_run_dir(self, run_config: RunConfig, now: Optional[datetime] = None) -> Path:
        """Fresh ``<command>-<YYYYmmdd-HHMMSS>-seed<k>`` directory; a numeric suffix avoids clashes."""
        stamp = (now or datetime.now()).strftime("%Y%m%d-%H%M%S")
        base = f"{run_config.command}-{stamp}-seed{run_config.seed}"
        root = self.output_root(run_config)
        run_dir = root / base
        suffix = 1
        while run_dir.exists():
            run_dir = root / f"{base}-{suffix}"
            suffix += 1
        run_dir.mkdir(parents=True)
        return run_dir

    def execute(self, run_config: RunConfig) -> RunRecord:
        """Run one command; everything it writes goes into a new run directory."""
        command = run_config.command
        if command not in self.handlers:
            raise ConfigError(f"unknown command '{command}'")
        run_dir = self.create_run_dir(run_config)
        handler = add_file_handler(str(run_dir / "run.log"), self.config.log_level)
        try:
            self.logger.info(f"Starting {command} in {run_dir} (preset={run_config.run.preset}, seed={run_config.seed})")
            with log_performance(f"{command} run"):
                metrics, passed = self.handlers[command](run_config, run_dir)
            metrics = {"command": command, "preset": run_config.run.preset, "seed": run_config.seed, **metrics}
            self.exporter.export_metrics(metrics, run_dir / "metrics.json")
        finally:
            remove_handler(handler)
        record = RunRecord(command=command, run_dir=run_dir, metrics=metrics, passed=passed)
        self.run_history.append(record)
        self.logger.info(f"Finished {command}: outputs in {run_dir}")
        return record

    def _write_config(self, run_config: RunConfig, run_dir: Path, spec: Optional[TaskSpec] = None) -> TrainConfig:
        """Write the resolved run.cfg and return the train config it describes."""
        resolved = run_config.resolved(spec)
        if resolved.train.snapshot_every == 0 and self.config.settings.snapshot_every > 0:
            resolved.train.snapshot_every = self.config.settings.snapshot_every
        resolved.save(run_dir / "run.cfg")
        return resolved.train

    # -----------------------------------------------------------------------
    # shared pieces
    # -----------------------------------------------------------------------
    def _load_optional(self, path: str) -> Optional[np.ndarray]:
        return load_png(path).data if path else None

    def _observation(self, run_config: RunConfig, spec: TaskSpec, gt: Optional[np.ndarray]) -> Tuple[np.ndarray, bool]:
        """The degraded input: read from --in, or synthesized from the ground truth with the run seed."""
        if run_config.io.input:
            return load_png(run_config.io.input).data, False
        if gt is None:
            raise ConfigError(f"{run_config.command} needs an input image (--in) or a ground truth (--gt) to degrade")
        return degrade(gt, spec, seed=run_config.seed).data, True

    def _fit(self, run_config: RunConfig, spec: TaskSpec, observed: np.ndarray, gt: Optional[np.ndarray],
             train_config: TrainConfig) -> Tuple[RunResult, HourglassModel]:
        height, width = spec.target_spatial_shape(observed.shape)
        frames = observed.shape[1] if spec.is_video else None
        encoding = build_encoding(run_config.encoding, height, width, frames=frames)
        model = build_model(run_config.model_config(video=spec.is_video), seed=run_config.seed)
        self.logger.info(f"Model: {count_params(model):,} parameters, input {encoding.shape}")
        return train(model, encoding, observed, spec, train_config, gt=gt), model

    def _export_result(self, run_config: RunConfig, run_dir: Path, result: RunResult, model: HourglassModel) -> None:
        self.exporter.export_curves(result.curves_frame(), run_dir / "curves.csv")
        if result.restored.ndim == 4:
            self.exporter.export_video(result.restored, run_dir / "restored")
            self.exporter.export_image(result.restored[:, 0], run_dir / "restored_frame0.png")
        else:
            self.exporter.export_image(result.restored, run_dir / "restored.png")
        if result.snapshots:
            self.exporter.export_snapshots(result.snapshots, run_dir / "snapshots")
        if run_config.io.save_checkpoint:
            self.exporter.export_checkpoint(model, run_dir / "model.ckpt")

    def _hourglass_config(self, run_config: RunConfig):
        if run_config.model.architecture is not Architecture.HOURGLASS:
            raise ConfigError(f"{run_config.command} sweeps hourglass models; preset '{run_config.run.preset}' is a flat MLP")
        return run_config.model.to_model_config(4 * run_config.encoding.m)

    def _sweep_image(self, run_config: RunConfig) -> np.ndarray:
        path = run_config.io.gt or run_config.io.input
        if not path:
            raise ConfigError(f"{run_config.command} needs a clean image (--gt)")
        return load_png(path).data

    def _sweep_iterations(self, run_config: RunConfig) -> int:
        spec = create_denoise_task(run_config.task.sigma)
        return run_config.train_config(spec).iterations

    # -----------------------------------------------------------------------
    # restoration commands
    # -----------------------------------------------------------------------
    def _run_denoise(self, run_config: RunConfig, run_dir: Path) -> Tuple[Dict[str, Any], bool]:
        spec = run_config.task_spec()
        gt = self._load_optional(run_config.io.gt)
        observed, synthesized = self._observation(run_config, spec, gt)
        train_config = self._write_config(run_config, run_dir, spec)
        if synthesized:
            self.exporter.export_image(observed, run_dir / "observed.png")

        result, model = self._fit(run_config, spec, observed, gt, train_config)
        self._export_result(run_config, run_dir, result, model)
        metrics = result.to_metrics()
        metrics["noisy_psnr"] = psnr(observed, gt) if gt is not None else None
        metrics["ssim"] = ssim(result.restored, gt) if gt is not None else None
        return metrics, True

    def _run_sr(self, run_config: RunConfig, run_dir: Path) -> Tuple[Dict[str, Any], bool]:
        spec = run_config.task_spec()
        gt = self._load_optional(run_config.io.gt)
        observed, _ = self._observation(run_config, spec, gt)
        train_config = self._write_config(run_config, run_dir, spec)
        self.exporter.export_image(observed, run_dir / "observed.png")

        result, model = self._fit(run_config, spec, observed, gt, train_config)
        self._export_result(run_config, run_dir, result, model)
        bicubic = upscale_bicubic(observed, spec.sr_factor)
        bilinear = upscale_bilinear(observed, spec.sr_factor)
        self.exporter.export_image(bicubic, run_dir / "bicubic.png")

        metrics = result.to_metrics()
        metrics["bicubic_psnr"] = psnr(bicubic, gt) if gt is not None else None
        metrics["bilinear_psnr"] = psnr(bilinear, gt) if gt is not None else None
        return metrics, True

    def _run_inpaint(self, run_config: RunConfig, run_dir: Path) -> Tuple[Dict[str, Any], bool]:
        gt = self._load_optional(run_config.io.gt)
        source = gt if gt is not None else self._load_optional(run_config.io.input)
        if source is None:
            raise ConfigError("inpaint needs an input image (--in) or a ground truth (--gt)")
        if run_config.io.mask:
            mask = load_mask(run_config.io.mask)
        else:
            height, width = source.shape[-2:]
            mask = random_mask(height, width, run_config.task.mask_fraction, seed=run_config.seed,
                               block=run_config.task.mask_block)
        spec = run_config.task_spec(mask=mask)
        observed, _ = self._observation(run_config, spec, gt)
        train_config = self._write_config(run_config, run_dir, spec)
        self.exporter.export_image(observed, run_dir / "observed.png")
        self.exporter.export_image(mask, run_dir / "mask.png")

        result, model = self._fit(run_config, spec, observed, gt, train_config)
        self._export_result(run_config, run_dir, result, model)
        metrics = result.to_metrics()
        metrics["known_fraction"] = float(mask.mean())
        return metrics, True

    def _run_video_denoise(self, run_config: RunConfig, run_dir: Path) -> Tuple[Dict[str, Any], bool]:
        spec = run_config.task_spec()
        io = run_config.io
        gt = load_frames(io.gt, io.frame_rate).to_array() if io.gt else None
        if io.input:
            observed = load_frames(io.input, io.frame_rate).to_array()
        elif gt is not None:
            observed = degrade(gt, spec, seed=run_config.seed).data
        else:
            raise ConfigError("video-denoise needs an input frame directory (--in) or ground-truth frames (--gt)")
        train_config = self._write_config(run_config, run_dir, spec)

        if run_config.task.video_mode == "2d":
            frame_config = run_config.model_config(video=False)
            _, _, height, width = observed.shape
            results = restore_framewise(
                lambda t: build_model(frame_config, seed=run_config.seed),
                lambda: build_encoding(run_config.encoding, height, width),
                observed, spec, train_config, gt_video=gt,
            )
            restored = np.stack([r.restored for r in results], axis=1)
            curves = pd.concat([r.curves_frame().assign(frame=t) for t, r in enumerate(results)], ignore_index=True)
            self.exporter.export_curves(curves, run_dir / "curves.csv")
            self.exporter.export_video(restored, run_dir / "restored")
            self.exporter.export_image(restored[:, 0], run_dir / "restored_frame0.png")
            metrics = {
                "frames": len(results),
                "stop_iters": [r.stop_iteration for r in results],
                "final_loss": float(np.mean([r.loss_curve[-1] for r in results])),
            }
        else:
            result, model = self._fit(run_config, spec, observed, gt, train_config)
            self._export_result(run_config, run_dir, result, model)
            restored = result.restored
            metrics = result.to_metrics()
            metrics["frames"] = observed.shape[1]

        metrics["video_mode"] = run_config.task.video_mode
        metrics["psnr"] = psnr(restored, gt) if gt is not None else None
        metrics["ssim3d"] = ssim3d_windowed(restored, gt) if gt is not None else None
        metrics["noisy_psnr"] = psnr(observed, gt) if gt is not None else None
        return metrics, True

    # -----------------------------------------------------------------------
    # analysis commands
    # -----------------------------------------------------------------------
    def _run_spectral_bias(self, run_config: RunConfig, run_dir: Path) -> Tuple[Dict[str, Any], bool]:
        self._write_config(run_config, run_dir)
        analysis = run_config.analysis
        probe, result, gt = run_spectral_probe(
            size=analysis.size, freqs=analysis.probe_freqs, iterations=analysis.probe_iterations,
            sample_every=analysis.sample_every, f_max=analysis.probe_f_max,
            model_config=run_config.model.to_model_config(4 * run_config.encoding.m),
            m=run_config.encoding.m, seed=run_config.seed, lr=run_config.train.lr,
        )
        crossings = convergence_order(probe, analysis.threshold)
        self.exporter.export_table(probe.to_frame(), run_dir / "probe.csv")
        self.exporter.export_curves(result.curves_frame(), run_dir / "curves.csv")
        self.exporter.export_image(gt, run_dir / "target.png")
        self.exporter.export_image(result.restored, run_dir / "restored.png")
        return {
            "probe_freqs": list(analysis.probe_freqs),
            "threshold": analysis.threshold,
            "crossings": crossings,
            "ordered": is_ordered(crossings),
            "final_psnr": result.final_psnr,
        }, True

    def _run_fmax_sweep(self, run_config: RunConfig, run_dir: Path) -> Tuple[Dict[str, Any], bool]:
        self._write_config(run_config, run_dir)
        clean = self._sweep_image(run_config)
        table, images = fmax_sweep(
            clean, sigma=run_config.task.sigma, exponents=run_config.analysis.exponents,
            iterations=self._sweep_iterations(run_config), model_config=self._hourglass_config(run_config),
            m=run_config.encoding.m, seed=run_config.seed, workers=self.config.jobs,
        )
        self.exporter.export_table(table, run_dir / "sweep.csv")
        for exponent, image in zip(run_config.analysis.exponents, images.values()):
            self.exporter.export_image(image, run_dir / f"restored_fmax_2e{exponent}.png")
        return {"sweep": table.to_dict("records")}, True

    def _run_ablation(self, run_config: RunConfig, run_dir: Path) -> Tuple[Dict[str, Any], bool]:
        self._write_config(run_config, run_dir)
        clean = self._sweep_image(run_config)
        table, images = run_ablation(
            clean, sigma=run_config.task.sigma, architectures=run_config.analysis.architectures,
            inputs=run_config.analysis.inputs, iterations=self._sweep_iterations(run_config),
            model_config=self._hourglass_config(run_config), m=run_config.encoding.m,
            f_max=run_config.encoding.f_max, seed=run_config.seed, workers=self.config.jobs,
        )
        self.exporter.export_table(table, run_dir / "ablation.csv")
        for label, image in images.items():
            self.exporter.export_image(image, run_dir / f"restored_{label.replace('/', '_')}.png")
        return {"ablation": table.to_dict("records")}, True

    def _run_prop1_check(self, run_config: RunConfig, run_dir: Path) -> Tuple[Dict[str, Any], bool]:
        self._write_config(run_config, run_dir)
        analysis = run_config.analysis
        table = prop1_suite(sizes=analysis.sizes, trials=analysis.trials, seed=run_config.seed,
                            input_law=analysis.input_law, r=analysis.support, steps=analysis.steps)
        summary = summarize_suite(table)
        self.exporter.export_table(table, run_dir / "prop1.csv")
        self.exporter.export_table(summary, run_dir / "prop1_summary.csv")
        passed = bool(table["passed"].all())
        return {
            "input_law": analysis.input_law,
            "trials": int(len(table)),
            "passed_trials": int(table["passed"].sum()),
            "max_gap": float(table["gap"].max()) if table["gap"].notna().any() else None,
            "max_oracle_gap": float(table["oracle_gap"].max()),
            "passed": passed,
            "summary": summary.to_dict("records"),
        }, passed

    def _run_count_params(self, run_config: RunConfig, run_dir: Path) -> Tuple[Dict[str, Any], bool]:
        self._write_config(run_config, run_dir)
        video = run_config.run.preset == "pip-video"
        model = build_model(run_config.model_config(video=video), seed=run_config.seed)
        size = run_config.analysis.flops_size
        params = count_params(model)
        flops = count_flops(model, size, size)
        self.exporter.export_table(pd.DataFrame(model.describe()), run_dir / "layers.csv")
        return {
            "params": params,
            "params_m": round(params / 1e6, 4),
            "layers": count_layers(model),
            "flops": flops,
            "gflops": round(flops / 1e9, 4),
            "flops_size": size,
            "model": to_dict(model.config),
        }, True

    def _run_encode_dump(self, run_config: RunConfig, run_dir: Path) -> Tuple[Dict[str, Any], bool]:
        self._write_config(run_config, run_dir)
        size = run_config.analysis.size
        encoding = build_encoding(run_config.encoding, size, size)
        channels = pd.DataFrame(describe_channels(encoding))
        self.exporter.export_table(channels, run_dir / "channels.csv")
        self.exporter.export_image(contact_sheet(encoding), run_dir / "contact_sheet.png")
        return {
            "kind": encoding.kind.value,
            "channels": encoding.channels,
            "size": size,
            "frequencies": [float(f) for fs in encoding.frequency_sets for f in fs.values],
        }, True

    # -----------------------------------------------------------------------
    # history
    # -----------------------------------------------------------------------
    def get_run_statistics(self) -> Dict[str, Any]:
        if not self.run_history:
            return {"message": "No runs executed yet"}
        commands: Dict[str, int] = {}
        for record in self.run_history:
            commands[record.command] = commands.get(record.command, 0) + 1
        return {
            "total_runs": len(self.run_history),
            "passed_runs": sum(record.passed for record in self.run_history),
            "command_breakdown": commands,
            "run_dirs": [str(record.run_dir) for record in self.run_history],
        }


# ---------------------------------------------------------------------------
# batch mode
# ---------------------------------------------------------------------------
def execute_config_file(job: Dict[str, Any]) -> Dict[str, Any]:
    """
    Run one config file with the given application settings and report the
    outcome as a plain dict. Top level so it pickles into worker processes.
    """
    app_config = AppConfig(use_env=False)
    app_config.update(**job["settings"])
    logger = setup_logging(app_config.log_level) if job.get("configure_logging") else get_logger(__name__)
    error_handler = ErrorHandler(logger)
    try:
        run_config = RunConfig.build(path=job["path"])
        record = RunManager(app_config, error_handler).execute(run_config)
        return {"config": str(job["path"]), "run_dir": str(record.run_dir),
                "exit_code": 0 if record.passed else 1, "message": ""}
    except Exception as e:
        response = error_handler.handle_exception(e, {"config": str(job["path"])})
        return {"config": str(job["path"]), "run_dir": "", "exit_code": response.exit_code, "message": response.message}


def run_batch(paths: Sequence[PathLike], app_config: AppConfig, jobs: int = 1) -> pd.DataFrame:
    """Run every config file; one row per file with its run directory and exit code."""
    settings = app_config.to_dict()
    settings["jobs"] = 1
    pooled = jobs > 1 and len(paths) > 1
    work = [{"path": str(path), "settings": settings, "configure_logging": pooled} for path in paths]
    logger = get_logger(__name__)
    with log_performance(f"batch of {len(work)} runs (jobs={jobs})"):
        if pooled:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                rows = list(pool.map(execute_config_file, work))
        else:
            rows = [execute_config_file(job) for job in work]
    table = pd.DataFrame(rows, columns=["config", "run_dir", "exit_code", "message"])
    logger.info(f"Batch finished: {int((table['exit_code'] == 0).sum())}/{len(table)} runs succeeded")
    return table
