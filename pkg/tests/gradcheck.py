"""Central-difference gradient checks for the tensor ops (float64)."""

from typing import Callable, List, Sequence

import numpy as np

from tensor import Tensor

EPS = 1e-6


def analytic_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> List[np.ndarray]:
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    fn(*tensors).backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def numerical_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], eps: float = EPS) -> List[np.ndarray]:
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for index, array in enumerate(arrays):
        grad = np.zeros_like(array)
        for position in np.ndindex(array.shape):
            original = array[position]
            array[position] = original + eps
            plus = fn(*[Tensor(a, dtype=np.float64) for a in arrays]).item()
            array[position] = original - eps
            minus = fn(*[Tensor(a, dtype=np.float64) for a in arrays]).item()
            array[position] = original
            grad[position] = (plus - minus) / (2 * eps)
        grads.append(grad)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def max_gradient_error(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> float:
    """Worst relative error between backward() and central differences over all inputs."""
    analytic = analytic_gradients(fn, arrays)
    numeric = numerical_gradients(fn, arrays)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar reduction of a non-scalar output: sum(out * weights)."""
    return (out * Tensor(np.asarray(weights, dtype=out.dtype))).sum()
