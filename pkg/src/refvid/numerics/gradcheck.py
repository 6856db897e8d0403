"""Central finite-difference gradient verification.

Used by the test suite to validate every trainable kernel's tape gradient
against an independent numeric estimate, on a float64 shadow of the graph.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import GradTape, Tensor


def numeric_gradients(fn: Callable[[Sequence[Tensor]], Tensor],
                      arrays: Sequence[np.ndarray],
                      eps: float = 1e-3) -> list[np.ndarray]:
    """Central-difference d(fn)/d(input) for each input array, elementwise."""
    grads = []
    for i, base in enumerate(arrays):
        g = np.zeros_like(base, dtype=np.float64)
        flat = g.reshape(-1)
        work = [a.copy() for a in arrays]
        for j in range(base.size):
            work[i].reshape(-1)[j] = base.reshape(-1)[j] + eps
            hi = float(fn([Tensor(a) for a in work]).data)
            work[i].reshape(-1)[j] = base.reshape(-1)[j] - eps
            lo = float(fn([Tensor(a) for a in work]).data)
            work[i].reshape(-1)[j] = base.reshape(-1)[j]
            flat[j] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def tape_gradients(fn: Callable[[Sequence[Tensor]], Tensor],
                   arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    inputs = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with GradTape() as tape:
        loss = fn(inputs)
        return tape.gradients(loss, inputs)


def max_rel_error(fn: Callable[[Sequence[Tensor]], Tensor],
                  arrays: Sequence[np.ndarray],
                  eps: float = 1e-3) -> float:
    """Worst relative disagreement between tape and numeric gradients.

    Inputs should be float64 so the finite differences are trustworthy at
    the 1e-3 step size.
    """
    analytic = tape_gradients(fn, arrays)
    numeric = numeric_gradients(fn, arrays, eps=eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(float(np.abs(n).max()), 1.0)
        worst = max(worst, float(np.abs(a - n).max()) / scale)
    return worst
