"""
Central finite-difference gradient checks against the reverse-mode sweep.
"""
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from .autodiff import Tensor, backward, zero_grad
from .exceptions import ContractError

DEFAULT_STEP = 1e-5


@dataclass(frozen=True)
class GradientReport:
    name: str
    error: float
    analytic_norm: float
    numeric_norm: float


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_gradient(fn: Callable[[], Tensor], tensor: Tensor, step: float = DEFAULT_STEP) -> np.ndarray:
    """d fn() / d tensor by central differences, perturbing `tensor.data` in place."""
    tensor.data = np.ascontiguousarray(tensor.data)
    flat = tensor.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = float(fn().data)
        flat[i] = original - step
        minus = float(fn().data)
        flat[i] = original
        grad[i] = (plus - minus) / (2 * step)
    return grad.reshape(tensor.shape)


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                    step: float = DEFAULT_STEP) -> List[GradientReport]:
    """
    Compare the analytic gradient of the scalar `fn()` with central
    differences for every tensor in `tensors` (each must require grad).
    """
    for t in tensors:
        if not t.requires_grad:
            raise ContractError(f"{t!r} does not require grad")
    zero_grad(tensors)
    root = fn()
    if root.size != 1:
        raise ContractError(f"gradient checks need a scalar function, got shape {root.shape}")
    backward(root)
    analytic = [np.zeros(t.shape) if t.grad is None else np.asarray(t.grad, dtype=np.float64) for t in tensors]
    zero_grad(tensors)
    reports = []
    for i, (t, a) in enumerate(zip(tensors, analytic)):
        numeric = numeric_gradient(fn, t, step)
        reports.append(GradientReport(getattr(t, 'name', f"input{i}"), relative_error(a, numeric),
                                      float(np.linalg.norm(a)), float(np.linalg.norm(numeric))))
    return reports


def max_gradient_error(fn: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = DEFAULT_STEP) -> float:
    return max(r.error for r in check_gradients(fn, tensors, step))
