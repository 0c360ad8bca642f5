"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: tuple
    analytic: float
    numeric: float
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(a, n) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    n = np.asarray(n, dtype=float)
    return np.abs(a - n) / np.maximum(1e-12, np.abs(a) + np.abs(n))


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place (restored after)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return grad


def grad_check(
    f: Callable[[], float],
    x: np.ndarray,
    analytic: np.ndarray,
    h: float = 1e-5,
    tolerance: float = 1e-6,
) -> GradCheckReport:
    """Compare ``analytic`` against central differences of ``f`` w.r.t. ``x``.

    ``f`` takes no arguments and reads ``x`` (which is perturbed in place).
    """
    numeric = numerical_gradient(f, x, h)
    rel = relative_error(analytic, numeric)
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    return GradCheckReport(
        float(rel.max()) if rel.size else 0.0, tuple(int(i) for i in worst),
        float(analytic[worst]) if rel.size else 0.0, float(numeric[worst]) if rel.size else 0.0,
        int(rel.size), tolerance,
    )
