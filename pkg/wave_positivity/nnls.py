"""Active-set nonnegative least squares (Lawson-Hanson)."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
import numpy.typing as npt
from scipy.linalg import lstsq

from .const import NNLS_ITER_FACTOR
from .operator import FloatArray

_LOGGER = logging.getLogger(__name__)


class NnlsStatus(StrEnum):
    """Termination reason."""

    CONVERGED = "converged"
    ITERATION_CAP = "iteration_cap"


@dataclass(frozen=True, eq=False)
class NnlsResult:
    """Solution of min ||A x - b|| subject to x >= lower."""

    x: FloatArray
    residual: float
    iterations: int
    status: NnlsStatus

    @property
    def converged(self) -> bool:
        """True if the KKT conditions were met before the cap."""
        return self.status is NnlsStatus.CONVERGED


def _default_tol(a: FloatArray, b: FloatArray) -> float:
    scale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
    col = float(np.max(np.abs(a), initial=1.0))
    return 10.0 * np.finfo(float).eps * max(a.shape) * scale * col


def _free_solve(a: FloatArray, b: FloatArray, free: npt.NDArray[np.bool_]) -> FloatArray:
    out = np.zeros(a.shape[1])
    if np.any(free):
        out[free] = lstsq(a[:, free], b, lapack_driver="gelsy")[0]
    return out


def nnls(
    a: npt.ArrayLike,
    b: npt.ArrayLike,
    *,
    max_iter: int | None = None,
    tol: float | None = None,
) -> NnlsResult:
    """Solve min ||a x - b|| subject to x >= 0.

    The free set grows by the coordinate with the largest positive dual
    variable; whenever the free least-squares solution leaves the orthant the
    iterate moves to the boundary and the blocking coordinates are clamped.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    k = a.shape[1]
    cap = NNLS_ITER_FACTOR * k if max_iter is None else max_iter
    tol = _default_tol(a, b) if tol is None else tol

    x = np.zeros(k)
    free = np.zeros(k, dtype=bool)
    w = a.T @ (b - a @ x)
    iterations = 0
    status = NnlsStatus.CONVERGED

    while np.any(~free) and np.max(w[~free]) > tol:
        if iterations >= cap:
            status = NnlsStatus.ITERATION_CAP
            break
        iterations += 1
        j = int(np.argmax(np.where(free, -np.inf, w)))
        free[j] = True

        s = _free_solve(a, b, free)
        while np.any(s[free] <= 0.0):
            if iterations >= cap:
                status = NnlsStatus.ITERATION_CAP
                break
            iterations += 1
            blocking = free & (s <= 0.0)
            gap = x[blocking] - s[blocking]
            alpha = np.min(np.where(gap > 0.0, x[blocking] / np.where(gap > 0.0, gap, 1.0), 0.0))
            x = x + alpha * (s - x)
            clamp = free & (x <= tol)
            # the entering coordinate may be clamped right away
            free[clamp] = False
            x[clamp] = 0.0
            s = _free_solve(a, b, free)
        if status is NnlsStatus.ITERATION_CAP:
            break
        x = s
        w = a.T @ (b - a @ x)

    residual = float(np.linalg.norm(a @ x - b))
    _LOGGER.debug(
        "NNLS %dx%d: %s after %d iterations, residual %.3g",
        a.shape[0], k, status, iterations, residual,
    )
    return NnlsResult(x=x, residual=residual, iterations=iterations, status=status)


def bounded_least_squares(
    a: npt.ArrayLike,
    b: npt.ArrayLike,
    lower: npt.ArrayLike,
    *,
    max_iter: int | None = None,
) -> NnlsResult:
    """Solve min ||a x - b|| subject to x >= lower by shifting onto the orthant."""
    a = np.asarray(a, dtype=np.float64)
    low = np.broadcast_to(np.asarray(lower, dtype=np.float64), (a.shape[1],))
    shifted = nnls(a, np.asarray(b, dtype=np.float64) - a @ low, max_iter=max_iter)
    return NnlsResult(
        x=shifted.x + low,
        residual=shifted.residual,
        iterations=shifted.iterations,
        status=shifted.status,
    )


def kkt_violation(
    a: npt.ArrayLike, b: npt.ArrayLike, x: npt.ArrayLike, lower: npt.ArrayLike = 0.0
) -> float:
    """Largest KKT violation of x for min 0.5 ||a x - b||^2 subject to x >= lower.

    Active coordinates need a gradient >= 0, free ones a vanishing gradient.
    """
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    low = np.broadcast_to(np.asarray(lower, dtype=np.float64), x.shape)
    grad = a.T @ (a @ x - np.asarray(b, dtype=np.float64))
    active = x <= low
    worst_active = float(np.max(-grad[active], initial=0.0))
    worst_free = float(np.max(np.abs(grad[~active]), initial=0.0))
    return max(worst_active, worst_free, 0.0)
