"""
Unit tests for the EMV and WMV early-stopping rules.
"""

import numpy as np
import pytest

from early_stopping import EMVStopper, WMVStopper, stop_emv, stop_wmv
from utils.error_handler import ConfigError

V_MINIMUM = 30


def constant_stream(length: int = 50):
    return [np.full((2, 2), 0.4) for _ in range(length)]


def v_shaped_steps(length: int = 80):
    """Monotone stream whose step size shrinks to 1 at V_MINIMUM and grows again."""
    steps = np.abs(np.arange(length) - V_MINIMUM) + 1.0
    return [np.full((2, 2), value) for value in np.cumsum(steps)]


def v_shaped_oscillation(length: int = 80):
    """Zero-mean oscillation with amplitude shrinking to its minimum at V_MINIMUM."""
    amplitudes = 0.01 * np.abs(np.arange(length) - V_MINIMUM) + 0.01
    return [np.full((2, 2), (-1) ** t * a) for t, a in enumerate(amplitudes)]


class TestConstantStream:
    """Variance 0 everywhere; the stop lands at the patience boundary."""

    def test_emv(self):
        decision = stop_emv(constant_stream(), patience=5)
        assert (decision.stop_index, decision.detected_at) == (0, 5)
        assert decision.variance == 0.0

    def test_wmv(self):
        """The first variance is available once the window is full."""
        decision = stop_wmv(constant_stream(), window=3, patience=5)
        assert (decision.stop_index, decision.detected_at) == (2, 7)


class TestVShapedStream:
    """The variance minimum is recovered within the patience."""

    def test_wmv_exact_minimum(self):
        """Window 2 variance is (step/2)², minimal where the step is smallest."""
        decision = stop_wmv(v_shaped_steps(), window=2, patience=10)
        assert decision.stop_index == V_MINIMUM
        assert decision.detected_at == V_MINIMUM + 10

    def test_emv_near_minimum(self):
        decision = stop_emv(v_shaped_oscillation(), decay=0.5, patience=10, warmup=5)
        assert decision is not None
        assert abs(decision.stop_index - V_MINIMUM) <= 10

    def test_no_stop_without_patience(self):
        assert stop_wmv(v_shaped_steps(35), window=2, patience=10) is None


class TestStopperState:
    """Bookkeeping of the incremental stoppers."""

    def test_wmv_warms_up(self):
        stopper = WMVStopper(window=4, patience=2)
        for output in constant_stream(3):
            assert not stopper.update(output)
        assert stopper.history == []
        stopper.update(constant_stream(1)[0])
        assert stopper.history == [(3, 0.0)]

    def test_warmup_skips_early_checks(self):
        """Checks inside the warmup are recorded but never become the minimum."""
        stopper = WMVStopper(window=2, patience=3, warmup=4)
        for value in np.cumsum(np.arange(1.0, 7.0)):
            stopper.update(np.full((2, 2), value))
        assert stopper.best_index == 4
        assert [index for index, _ in stopper.history] == [1, 2, 3, 4, 5]

    def test_decision_is_sticky(self):
        stopper = EMVStopper(patience=1)
        for output in constant_stream(5):
            stopper.update(output)
        assert stopper.stopped
        assert stopper.decision.stop_index == 0
        assert stopper.update(np.ones((2, 2)))

    def test_emv_bias_correction(self):
        """Samples 0 then 1 give emv = (1 − alpha)·alpha, divided by the correction alpha."""
        stopper = EMVStopper(decay=0.9)
        stopper.update(np.zeros(1))
        stopper.update(np.ones(1))
        alpha = 0.1
        expected = (1 - alpha) * alpha / alpha
        assert stopper.history[-1][1] == pytest.approx(expected)

    @pytest.mark.parametrize("factory,message", [
        (lambda: EMVStopper(decay=1.0), "decay"),
        (lambda: WMVStopper(window=1), "window"),
        (lambda: EMVStopper(patience=0), "patience"),
        (lambda: WMVStopper(warmup=-1), "warmup"),
    ])
    def test_invalid_settings(self, factory, message):
        with pytest.raises(ConfigError, match=message):
            factory()
