"""Central-difference gradient oracle."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import NotScalarLoss, PrecisionError
from .core import Tape, Tensor, backward, get_precision, no_record


def numeric_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> list:
    """(f(x+eps) - f(x-eps)) / (2 eps), one coordinate at a time."""
    out = []
    with no_record():
        for t in inputs:
            flat = t.data.reshape(-1)
            g = np.zeros(flat.shape, dtype=np.float64)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                fp = fn(*inputs).item()
                flat[k] = orig - eps
                fm = fn(*inputs).item()
                flat[k] = orig
                g[k] = (fp - fm) / (2 * eps)
            out.append(g.reshape(t.shape))
    return out


def analytic_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list:
    with Tape() as tape:
        tape.watch(*inputs)
        loss = fn(*inputs)
    if loss.size != 1:
        raise NotScalarLoss(f"grad_check needs a scalar function, got shape {loss.shape}")
    backward(tape, loss)
    return [t.grad.astype(np.float64) for t in inputs]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float((np.abs(analytic - numeric) / denom).max())


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` is called as ``fn(*inputs)`` and must return a scalar tensor.
    Requires the fp64 precision mode and fp64 inputs.
    """
    if get_precision() != "fp64" or any(t.data.dtype != np.float64 for t in inputs):
        raise PrecisionError("grad_check requires fp64 mode and fp64 inputs")
    ana = analytic_grad(fn, inputs)
    num = numeric_grad(fn, inputs, eps)
    return max((relative_error(a, n) for a, n in zip(ana, num)), default=0.0)
