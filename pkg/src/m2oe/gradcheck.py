"""Central-difference gradient verification."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError, DeterminismError
from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / scale


def numeric_gradient(loss_fn: Callable[[], Tensor], param: Tensor, eps: float) -> np.ndarray:
    values = param.values
    out = np.zeros_like(values)
    flat = values.reshape(-1)
    grad_flat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn().item()
        flat[i] = orig - eps
        down = loss_fn().item()
        flat[i] = orig
        grad_flat[i] = (up - down) / (2.0 * eps)
    return out


def grad_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
               eps: float = 1e-6) -> dict[str, float]:
    """Max relative error between backprop and central differences, per parameter.

    ``loss_fn`` must rebuild the graph from scratch on every call and return a
    scalar; any randomness inside it has to be reseeded per call.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ConfigError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    first = loss_fn()
    if loss_fn().item() != first.item():
        raise DeterminismError("loss_fn returned different values for identical parameters")
    for p in params.values():
        p.zero_grad()
    first.backward()
    report = {}
    for name, p in params.items():
        analytic = p.grad.copy()
        numeric = numeric_gradient(loss_fn, p, eps)
        report[name] = float(relative_error(analytic, numeric).max()) if analytic.size else 0.0
    return report
