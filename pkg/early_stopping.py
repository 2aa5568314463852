"""
Variance-based early stopping for the PIP Restoration Toolkit

Both rules watch the stream of network outputs, one sample per check. The
output variance drops while the network fits image content and rises again
once it starts fitting noise. A check that sets a new strict minimum resets
the patience counter; ``patience`` checks in a row without one end the
search, and the stop point is the check holding the minimum.

EMV keeps an exponential moving variance per pixel (bias-corrected, so the
first samples are not artificially small); WMV takes the per-pixel variance
over a sliding window of the last ``window`` outputs.
"""

from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np

from utils.error_handler import ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class StopDecision:
    """Check index holding the variance minimum and the check at which it was confirmed."""
    stop_index: int
    detected_at: int
    variance: float


class VarianceStopper(ABC):
    """Tracks a scalar variance per check and detects its sustained minimum."""

    def __init__(self, patience: int = 100, warmup: int = 0):
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        if warmup < 0:
            raise ConfigError("warmup must be non-negative")
        self.patience = patience
        self.warmup = warmup
        self.count = 0
        self.best_variance = np.inf
        self.best_index: Optional[int] = None
        self.since_best = 0
        self.improved = False
        self.decision: Optional[StopDecision] = None
        self.history: List[Tuple[int, float]] = []

    @abstractmethod
    def _variance(self, output: np.ndarray) -> Optional[float]:
        """Scalar variance after adding this sample, or None while warming up."""

    def update(self, output: np.ndarray) -> bool:
        """Feed one output; returns True once a stop has been decided."""
        index = self.count
        self.count += 1
        self.improved = False
        variance = self._variance(np.asarray(output, dtype=np.float64))
        if variance is None:
            return self.decision is not None
        self.history.append((index, variance))
        if self.decision is not None or index < self.warmup:
            return self.decision is not None

        if variance < self.best_variance:
            self.best_variance = variance
            self.best_index = index
            self.since_best = 0
            self.improved = True
        else:
            self.since_best += 1
            if self.since_best >= self.patience:
                self.decision = StopDecision(self.best_index, index, float(self.best_variance))
                logger.debug(f"Variance minimum {self.best_variance:.3e} at check {self.best_index} confirmed at check {index}")
        return self.decision is not None

    @property
    def stopped(self) -> bool:
        return self.decision is not None


class EMVStopper(VarianceStopper):
    """Exponential moving variance: ema += a(x − ema); emv = (1 − a)(emv + a(x − ema_prev)²)."""

    def __init__(self, decay: float = 0.99, patience: int = 100, warmup: int = 0):
        super().__init__(patience=patience, warmup=warmup)
        if not 0.0 <= decay < 1.0:
            raise ConfigError(f"decay must lie in [0, 1), got {decay}")
        self.alpha = 1.0 - decay
        self.ema: Optional[np.ndarray] = None
        self.emv: Optional[np.ndarray] = None
        self.updates = 0

    def _variance(self, output: np.ndarray) -> Optional[float]:
        if self.ema is None:
            self.ema = output.copy()
            self.emv = np.zeros_like(output)
            return 0.0
        delta = output - self.ema
        self.ema += self.alpha * delta
        self.emv = (1.0 - self.alpha) * (self.emv + self.alpha * delta * delta)
        self.updates += 1
        correction = 1.0 - (1.0 - self.alpha) ** self.updates
        return float(np.mean(self.emv) / correction) if correction > 0 else 0.0


class WMVStopper(VarianceStopper):
    """Mean per-pixel variance over the last ``window`` outputs."""

    def __init__(self, window: int = 50, patience: int = 100, warmup: int = 0):
        super().__init__(patience=patience, warmup=warmup)
        if window < 2:
            raise ConfigError("window must be >= 2")
        self.window = window
        self.buffer = deque(maxlen=window)

    def _variance(self, output: np.ndarray) -> Optional[float]:
        self.buffer.append(output.copy())
        if len(self.buffer) < self.window:
            return None
        return float(np.mean(np.var(np.stack(self.buffer), axis=0)))


def _run(stopper: VarianceStopper, outputs: Iterable[np.ndarray]) -> Optional[StopDecision]:
    for output in outputs:
        if stopper.update(output):
            return stopper.decision
    return None


def stop_emv(outputs: Iterable[np.ndarray], decay: float = 0.99, patience: int = 100, warmup: int = 0) -> Optional[StopDecision]:
    """Run EMV over an output stream; None if no stop was confirmed."""
    return _run(EMVStopper(decay=decay, patience=patience, warmup=warmup), outputs)


def stop_wmv(outputs: Iterable[np.ndarray], window: int = 50, patience: int = 100) -> Optional[StopDecision]:
    """Run WMV over an output stream; None if no stop was confirmed."""
    return _run(WMVStopper(window=window, patience=patience), outputs)
