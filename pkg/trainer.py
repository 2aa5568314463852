"""
Training loop for the PIP Restoration Toolkit

Fits a freshly initialized network to one degraded observation with Adam,
keeping an exponential moving average (EMA) of the outputs. The run either
spends its full budget (fixed rule) or watches the output variance (EMV or
WMV) and delivers the EMA output captured at the detected minimum.

Each iteration's output is recorded before that iteration's Adam step.
"""

import time
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from early_stopping import EMVStopper, VarianceStopper, WMVStopper
from input_encoding import EncodingTensor
from metrics import psnr
from models import IterationReport, RunResult, StopAction, StopRule, TaskKind, TaskSpec, TrainConfig
from network import HourglassModel, Padding, forward, forward_video
from optimizer import AdamState, adam_step
from tasks import task_loss
from tensor import Tensor, stack_data
from utils.error_handler import NumericalError, ShapeError
from utils.logger import get_logger, log_performance

logger = get_logger(__name__)

Callback = Callable[[IterationReport], None]


def make_stopper(cfg: TrainConfig) -> Optional[VarianceStopper]:
    if cfg.stop_rule is StopRule.EMV:
        return EMVStopper(decay=cfg.emv_decay, patience=cfg.patience, warmup=cfg.emv_warmup)
    if cfg.stop_rule is StopRule.WMV:
        return WMVStopper(window=cfg.window, patience=cfg.patience)
    return None


def _forward(model: HourglassModel, z: Tensor, padding: Padding, video: bool) -> Union[Tensor, List[Tensor]]:
    return forward_video(model, z, padding) if video else forward(model, z, padding)


def _output_array(output: Union[Tensor, List[Tensor]]) -> np.ndarray:
    if isinstance(output, Tensor):
        return output.data.copy()
    return stack_data(output, axis=1)


def _check_shapes(z: Tensor, observed: np.ndarray, spec: TaskSpec, gt: Optional[np.ndarray]) -> None:
    spec.check_observed(observed.shape)
    target_hw = spec.target_spatial_shape(observed.shape)
    if tuple(z.shape[-2:]) != tuple(target_hw):
        raise ShapeError(f"input code shape {z.shape} does not match target size {target_hw} for observed shape {observed.shape}")
    if spec.is_video:
        if z.ndim != 4 or z.shape[1] != observed.shape[1]:
            raise ShapeError(f"input code shape {z.shape} does not match observed video shape {observed.shape}")
    elif z.ndim != 3:
        raise ShapeError(f"input code shape {z.shape} must be C×H×W for {spec.kind.value}")
    if gt is not None:
        expected = observed.shape[:-2] + tuple(target_hw)
        if gt.shape != expected:
            raise ShapeError(f"ground truth shape {gt.shape} does not match expected shape {expected}")


def train(model: HourglassModel, z: Union[EncodingTensor, Tensor], observed, spec: TaskSpec,
          cfg: TrainConfig, gt=None, callback: Optional[Callback] = None) -> RunResult:
    """
    Optimize ``model`` (and any trainable encoding frequencies) so that the
    task's forward model applied to f(z) matches ``observed``.

    Raises NumericalError naming the iteration and learning rate if the
    loss becomes NaN or Inf.
    """
    encoding = z if isinstance(z, EncodingTensor) else None
    z_tensor = encoding.tensor if encoding is not None else z
    observed = np.asarray(observed.data if isinstance(observed, Tensor) else observed, dtype=np.float32)
    gt = None if gt is None else np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float32)
    _check_shapes(z_tensor, observed, spec, gt)

    video = spec.is_video
    padding = model.required_padding(*z_tensor.shape[-2:])
    if any(padding):
        logger.info(f"Reflection-padding input by {padding} to reach a multiple of {model.divisor}")

    params = model.parameters() + (encoding.parameters() if encoding is not None else [])
    state = AdamState(lr=cfg.lr)
    jitter_rng = np.random.default_rng(cfg.seed)
    stopper = make_stopper(cfg)

    loss_curve: List[float] = []
    psnr_curve: List[float] = []
    ema_psnr_curve: List[float] = []
    snapshots: List[Tuple[int, np.ndarray]] = []
    ema: Optional[np.ndarray] = None
    raw: Optional[np.ndarray] = None
    candidate: Optional[Tuple[int, np.ndarray]] = None
    stop_iteration: Optional[int] = None
    detected_at: Optional[int] = None
    decay = np.float32(cfg.ema_decay)

    start = time.perf_counter()
    iteration = 0
    with log_performance(f"train {spec.kind.value} ({cfg.iterations} iterations, stop={cfg.stop_rule.value})"):
        for iteration in range(1, cfg.iterations + 1):
            z_iter = encoding.materialize() if encoding is not None else z_tensor
            if cfg.input_jitter_std > 0:
                noise = jitter_rng.normal(0.0, cfg.input_jitter_std, z_iter.shape).astype(z_iter.dtype)
                z_iter = z_iter + Tensor(noise)

            output = _forward(model, z_iter, padding, video)
            loss = task_loss(output, observed, spec)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                logger.error(f"Loss became {loss_value} at iteration {iteration} (lr={cfg.lr})")
                raise NumericalError(f"non-finite loss {loss_value} at iteration {iteration} (lr={cfg.lr})")

            raw = _output_array(output)
            loss.backward()
            adam_step(params, state)
            if encoding is not None:
                encoding.project()

            ema = raw.copy() if ema is None else decay * ema + (np.float32(1.0) - decay) * raw
            loss_curve.append(loss_value)
            current_psnr = ema_psnr = None
            if gt is not None:
                current_psnr = psnr(raw, gt)
                ema_psnr = psnr(ema, gt)
                psnr_curve.append(current_psnr)
                ema_psnr_curve.append(ema_psnr)

            if stopper is not None and iteration % cfg.check_stride == 0:
                decided_before = stopper.stopped
                stopper.update(raw)
                if stopper.improved:
                    candidate = (iteration, ema.copy())
                if stopper.stopped and not decided_before:
                    stop_iteration, restored_ema = candidate
                    detected_at = iteration
                    logger.info(f"{cfg.stop_rule.value.upper()} stop at iteration {stop_iteration} (confirmed at {iteration})")
                    if cfg.stop_action is StopAction.HALT:
                        break

            if cfg.snapshot_every and iteration % cfg.snapshot_every == 0:
                snapshots.append((iteration, ema.copy()))
            if cfg.log_every and iteration % cfg.log_every == 0:
                tail = f", psnr={current_psnr:.2f}, ema_psnr={ema_psnr:.2f}" if gt is not None else ""
                logger.info(f"iteration {iteration}/{cfg.iterations}: loss={loss_value:.6f}{tail}")
            if callback is not None:
                callback(IterationReport(iteration, loss_value, current_psnr, ema_psnr, raw, ema))

    if stop_iteration is None:
        stop_iteration, restored = iteration, ema
    else:
        restored = restored_ema

    result = RunResult(
        output=raw,
        ema_output=ema,
        restored=restored,
        loss_curve=loss_curve,
        psnr_curve=psnr_curve,
        ema_psnr_curve=ema_psnr_curve,
        stop_iteration=stop_iteration,
        executed_iterations=iteration,
        iterations=cfg.iterations,
        stop_rule=cfg.stop_rule,
        stop_detected_at=detected_at,
        restored_psnr=psnr(restored, gt) if gt is not None else None,
        wall_clock=time.perf_counter() - start,
        padding=padding,
        variance_trace=[(i * cfg.check_stride + cfg.check_stride, v) for i, v in stopper.history] if stopper else [],
        snapshots=snapshots,
    )
    if gt is not None:
        logger.info(f"Restored PSNR {result.restored_psnr:.2f} dB at iteration {stop_iteration} "
                    f"(best EMA {result.best_psnr:.2f} dB at {result.best_iteration})")
    return result


def restore_framewise(model_factory: Callable[[int], HourglassModel], encoding_factory: Callable[[], EncodingTensor],
                      observed_video: np.ndarray, spec: TaskSpec, cfg: TrainConfig,
                      gt_video: Optional[np.ndarray] = None) -> List[RunResult]:
    """Independent 2D fits, one per frame (the frame-wise video baseline)."""
    frame_spec = TaskSpec(kind=TaskKind.DENOISE, noise=spec.noise)
    results = []
    for t in range(observed_video.shape[1]):
        logger.info(f"Frame-wise fit {t + 1}/{observed_video.shape[1]}")
        gt_frame = gt_video[:, t] if gt_video is not None else None
        results.append(train(model_factory(t), encoding_factory(), observed_video[:, t], frame_spec, cfg, gt=gt_frame))
    return results
