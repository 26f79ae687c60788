"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from .mlp import MlpParams

DEFAULT_STEP = 1e-5
# Entries whose analytic and numeric values agree this closely in absolute
# terms count as exact; rounding in the loss makes smaller gaps meaningless.
ABSOLUTE_FLOOR = 1e-9


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference check.

    Attributes:
        max_rel_error: Largest relative error over all checked entries.
        worst_index: Flat index of the entry with that error.
        n_checked: Number of entries compared.
        tolerance: Pass threshold used.
    """
    max_rel_error: float
    worst_index: int
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"<GradCheck {status}: max rel. error {self.max_rel_error:.3e} "
                f"at {self.worst_index} over {self.n_checked} entries>")


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(diff <= ABSOLUTE_FLOOR, 0.0, diff / scale)
    return rel


def _report(analytic: np.ndarray, numeric: np.ndarray, tolerance: float) -> GradCheckReport:
    rel = relative_errors(analytic, numeric)
    worst = int(np.argmax(rel)) if rel.size else -1
    return GradCheckReport(float(rel[worst]) if rel.size else 0.0, worst, int(rel.size), tolerance)


def finite_diff_check(params: MlpParams,
                      loss_fn: Callable[[MlpParams, np.ndarray], Tuple[float, MlpParams]],
                      x: np.ndarray, tolerance: float = 1e-4,
                      h: float = DEFAULT_STEP) -> GradCheckReport:
    """Compare ``loss_fn``'s parameter gradients with central differences.

    ``loss_fn(params, x)`` returns ``(loss, grads)``. Points on a relu kink
    give spurious failures; callers re-sample such configurations.
    """
    _, grads = loss_fn(params, x)
    analytic = grads.flatten()
    theta = params.flatten()
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        plus, _ = loss_fn(params.unflatten(theta), x)
        theta[i] = orig - h
        minus, _ = loss_fn(params.unflatten(theta), x)
        theta[i] = orig
        numeric[i] = (plus - minus) / (2.0 * h)
    return _report(analytic, numeric, tolerance)


def check_vector_gradient(fn: Callable[[np.ndarray], Tuple[float, np.ndarray]],
                          v: np.ndarray, tolerance: float = 1e-4,
                          h: float = DEFAULT_STEP) -> GradCheckReport:
    """Central-difference check of ``fn(v) -> (loss, dloss/dv)`` for a vector input."""
    v = np.array(v, dtype=np.float64, copy=True).ravel()
    _, grad = fn(v)
    numeric = np.empty_like(v)
    for i in range(v.size):
        orig = v[i]
        v[i] = orig + h
        plus, _ = fn(v)
        v[i] = orig - h
        minus, _ = fn(v)
        v[i] = orig
        numeric[i] = (plus - minus) / (2.0 * h)
    return _report(np.asarray(grad, dtype=np.float64).ravel(), numeric, tolerance)
