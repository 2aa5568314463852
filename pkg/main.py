#!/usr/bin/env python3
"""
PIP Restoration Toolkit - Command-Line Entry Point

``pip-restore <command> [options]`` runs one restoration or analysis
command and writes its outputs into a fresh run directory. Every command
accepts ``--config run.cfg``; flags given on the command line override the
file, which overrides the preset.

Exit codes: 0 success, 1 failed check or unexpected error, 2 configuration,
shape, data or file error, 3 numerical abort.
"""

import argparse
import json
import sys
import os
from typing import Any, Dict, Optional, Sequence

# Add the current directory to Python path for imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import AppConfig, RunConfig, list_presets
from export_manager import to_json_value
from run_manager import RunManager, RunRecord, run_batch
from utils.error_handler import ErrorHandler
from utils.logger import setup_logging

PROG = "pip-restore"

# argparse dest -> (run file section, key); list values are written comma-separated
FLAG_MAP = {
    "preset": ("run", "preset"),
    "seed": ("run", "seed"),
    "input": ("io", "input"),
    "gt": ("io", "gt"),
    "mask": ("io", "mask"),
    "run_output_root": ("io", "output_root"),
    "frame_rate": ("io", "frame_rate"),
    "save_checkpoint": ("io", "save_checkpoint"),
    "noise": ("task", "noise"),
    "sigma": ("task", "sigma"),
    "peak": ("task", "peak"),
    "factor": ("task", "sr_factor"),
    "downsampler": ("task", "downsampler"),
    "mask_fraction": ("task", "mask_fraction"),
    "mask_block": ("task", "mask_block"),
    "video_mode": ("task", "video_mode"),
    "encoding": ("encoding", "kind"),
    "m": ("encoding", "m"),
    "f_max": ("encoding", "f_max"),
    "trainable_freqs": ("encoding", "trainable"),
    "architecture": ("model", "architecture"),
    "levels": ("model", "levels"),
    "width": ("model", "width"),
    "kernel": ("model", "kernel"),
    "activation": ("model", "activation"),
    "iterations": ("train", "iterations"),
    "lr": ("train", "lr"),
    "stop_rule": ("train", "stop_rule"),
    "stop_action": ("train", "stop_action"),
    "patience": ("train", "patience"),
    "window": ("train", "window"),
    "snapshot_every": ("train", "snapshot_every"),
    "log_every": ("train", "log_every"),
    "size": ("analysis", "size"),
    "freqs": ("analysis", "probe_freqs"),
    "probe_iterations": ("analysis", "probe_iterations"),
    "sample_every": ("analysis", "sample_every"),
    "threshold": ("analysis", "threshold"),
    "exponents": ("analysis", "exponents"),
    "archs": ("analysis", "architectures"),
    "inputs": ("analysis", "inputs"),
    "n": ("analysis", "sizes"),
    "trials": ("analysis", "trials"),
    "input_law": ("analysis", "input_law"),
    "r": ("analysis", "support"),
    "steps": ("analysis", "steps"),
    "flops_size": ("analysis", "flops_size"),
}


def _common_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("run")
    group.add_argument("--config", help="run file (key=value sections) to start from")
    group.add_argument("--preset", choices=list_presets())
    group.add_argument("--seed", type=int)
    group.add_argument("--run-output-root", dest="run_output_root", help="write this run under another root")
    group.add_argument("--save-checkpoint", action="store_const", const=True, default=None)

    group = parser.add_argument_group("encoding and model")
    group.add_argument("--encoding", choices=["ff", "meshgrid", "noise"])
    group.add_argument("--m", type=int, help="number of frequencies per axis")
    group.add_argument("--f-max", dest="f_max", type=float)
    group.add_argument("--trainable-freqs", dest="trainable_freqs", action="store_const", const=True, default=None)
    group.add_argument("--architecture", choices=["hourglass", "flat_mlp"])
    group.add_argument("--levels", type=int)
    group.add_argument("--width", type=int)
    group.add_argument("--kernel", type=int, choices=[1, 3])
    group.add_argument("--activation", choices=["leaky_relu", "sine", "gaussian"])

    group = parser.add_argument_group("training")
    group.add_argument("--iterations", help="iteration budget, or 'auto' for the task default")
    group.add_argument("--lr", type=float)
    group.add_argument("--stop-rule", dest="stop_rule", choices=["fixed", "emv", "wmv"])
    group.add_argument("--stop-action", dest="stop_action", choices=["halt", "monitor"])
    group.add_argument("--patience", type=int)
    group.add_argument("--window", type=int)
    group.add_argument("--snapshot-every", dest="snapshot_every", type=int)
    group.add_argument("--log-every", dest="log_every", type=int)
    return parser


def _task_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("task")
    group.add_argument("--in", dest="input", help="degraded input (PNG, or frame directory for video)")
    group.add_argument("--gt", help="ground truth (PNG, or frame directory for video)")
    group.add_argument("--noise", choices=["gaussian", "poisson", "none"])
    group.add_argument("--sigma", type=float, help="Gaussian noise level on the 0-255 scale")
    group.add_argument("--peak", type=float, help="Poisson peak")
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="Zero-shot image restoration with positional-encoding priors")
    parser.add_argument("--log-level", dest="log_level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    parser.add_argument("--output-root", dest="output_root", help="directory that receives run directories")
    parser.add_argument("--env-file", dest="env_file", help="dotenv file with PIP_* settings")
    parser.add_argument("--jobs", type=int, help="worker processes for sweeps and batch runs")
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    common, task = _common_parser(), _task_parser()

    commands.add_parser("denoise", parents=[common, task], help="remove Gaussian or Poisson noise")

    sr = commands.add_parser("sr", parents=[common, task], help="super-resolve a low-resolution image")
    sr.add_argument("--factor", type=int, choices=[2, 4, 8])
    sr.add_argument("--downsampler", choices=["box", "bicubic"])

    inpaint = commands.add_parser("inpaint", parents=[common, task], help="fill missing pixels")
    inpaint.add_argument("--mask", help="mask PNG, bright = known pixel")
    inpaint.add_argument("--mask-fraction", dest="mask_fraction", type=float, help="missing fraction of a random mask")
    inpaint.add_argument("--mask-block", dest="mask_block", type=int)

    video = commands.add_parser("video-denoise", parents=[common, task], help="denoise a frame directory")
    video.add_argument("--video-mode", dest="video_mode", choices=["3d", "2d"])
    video.add_argument("--frame-rate", dest="frame_rate", type=float)

    probe = commands.add_parser("spectral-bias", parents=[common], help="amplitude-error probe on a synthetic tone image")
    probe.add_argument("--size", type=int)
    probe.add_argument("--freqs", type=int, nargs="+")
    probe.add_argument("--probe-iterations", dest="probe_iterations", type=int)
    probe.add_argument("--sample-every", dest="sample_every", type=int)
    probe.add_argument("--threshold", type=float)

    sweep = commands.add_parser("fmax-sweep", parents=[common, task], help="denoising PSNR across f_max = 2^e")
    sweep.add_argument("--exponents", type=int, nargs="+")

    ablation = commands.add_parser("ablation", parents=[common, task], help="architecture x input denoising table")
    ablation.add_argument("--archs", nargs="+", choices=["pip", "dip", "mlp"])
    ablation.add_argument("--inputs", nargs="+", choices=["ff", "ff_learned", "meshgrid", "noise"])

    prop1 = commands.add_parser("prop1-check", parents=[common], help="conv vs element-wise Fourier fit equivalence")
    prop1.add_argument("--n", type=int, nargs="+", help="signal lengths (powers of two)")
    prop1.add_argument("--trials", type=int)
    prop1.add_argument("--input-law", dest="input_law", choices=["gaussian", "uniform"])
    prop1.add_argument("--r", type=int, help="kernel support (defaults to N)")
    prop1.add_argument("--steps", type=int)

    counts = commands.add_parser("count-params", parents=[common], help="parameter, layer and FLOP counts")
    counts.add_argument("--flops-size", dest="flops_size", type=int)

    dump = commands.add_parser("encode-dump", parents=[common], help="contact sheet of the input encoding")
    dump.add_argument("--size", type=int)

    batch = commands.add_parser("batch", help="run several run files")
    batch.add_argument("configs", nargs="+", help="run files written by earlier runs or by hand")
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    """Run file layer made of the flags that were given."""
    layer: Dict[str, Dict[str, Any]] = {"run": {"command": args.command}}
    for dest, (section, key) in FLAG_MAP.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        layer.setdefault(section, {})[key] = value
    return layer


class ToolkitApp:
    """Main application class that orchestrates one CLI invocation."""

    def __init__(self, args: argparse.Namespace):
        """Initialize configuration, logging and error handling."""
        self.args = args
        self.config = AppConfig(env_file=args.env_file)
        self.config.update(log_level=args.log_level, output_root=args.output_root, jobs=args.jobs)
        self.logger = setup_logging(log_level=self.config.log_level)
        self.error_handler = ErrorHandler(self.logger)
        self.manager: Optional[RunManager] = None

    def run(self) -> int:
        """Execute the requested command and return the process exit code."""
        try:
            self.config.validate_config()
            if self.args.command == "batch":
                return self._run_batch()
            run_config = RunConfig.build(path=self.args.config, overrides=collect_overrides(self.args))
            self.manager = RunManager(self.config, self.error_handler)
            record = self.manager.execute(run_config)
            self._report(record)
            return 0 if record.passed else 1
        except KeyboardInterrupt:
            print("\nInterrupted by user", file=sys.stderr)
            return 130
        except Exception as e:
            response = self.error_handler.handle_exception(e, {"command": self.args.command})
            print(f"{PROG}: error: {response.message}", file=sys.stderr)
            if response.suggested_action:
                print(f"{PROG}: {response.suggested_action}", file=sys.stderr)
            return response.exit_code

    def _run_batch(self) -> int:
        table = run_batch(self.args.configs, self.config, jobs=self.config.jobs)
        print(table.to_string(index=False))
        failed = table[table["exit_code"] != 0]
        return int(failed["exit_code"].max()) if len(failed) else 0

    def _report(self, record: RunRecord) -> None:
        """Short summary on stdout; the full metrics live in the run directory."""
        metrics = record.metrics
        if record.command == "count-params":
            print(f"params: {metrics['params']:,} ({metrics['params_m']:.2f}M), layers: {metrics['layers']}, "
                  f"GFLOPs at {metrics['flops_size']}x{metrics['flops_size']}: {metrics['gflops']:.2f}")
        elif record.command == "prop1-check":
            for row in metrics["summary"]:
                print(f"N={row['N']:>4} r={row['r']:>4} trials={row['trials']} max_gap={row['max_gap']:.3e} "
                      f"max_oracle_gap={row['max_oracle_gap']:.3e} passed={row['passed']}")
            print("PASS" if record.passed else "FAIL")
        else:
            summary = {k: v for k, v in metrics.items() if not isinstance(v, (list, dict))}
            print(json.dumps(to_json_value(summary), indent=2, sort_keys=True))
        print(f"outputs: {record.run_dir}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the toolkit."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        app = ToolkitApp(args)
    except Exception as e:
        print(f"{PROG}: failed to initialize: {e}", file=sys.stderr)
        return 2
    return app.run()


if __name__ == "__main__":
    sys.exit(main())
