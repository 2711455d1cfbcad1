"""Steady states generated by time-independent controls."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
import numpy.typing as npt

from .exceptions import FredholmError, GridMismatchError, NonFiniteInputError
from .operator import DirichletOperator, FloatArray, check_fredholm
from .propagator import Boundary, ControlSignal, Interior, State, Support

_LOGGER = logging.getLogger(__name__)


class SteadyKind(StrEnum):
    """How the steady control acts."""

    INTERIOR = "interior"
    BOUNDARY = "boundary"


@dataclass(frozen=True, eq=False, kw_only=True)
class SteadyPair:
    """Steady state y together with the control u generating it.

    For interior pairs `u` is a grid function; for boundary pairs it holds the
    values at the active ends, left first.
    """

    y: FloatArray
    u: FloatArray
    support: Support
    residual: float = 0.0

    @property
    def kind(self) -> SteadyKind:
        """Interior or boundary."""
        if isinstance(self.support, Interior):
            return SteadyKind.INTERIOR
        return SteadyKind.BOUNDARY

    @property
    def state(self) -> State:
        """The steady state as a position/velocity pair at rest."""
        return State.at_rest(self.y)

    def control(self, dt: float, steps: int) -> ControlSignal:
        """Constant-in-time control on `steps` steps."""
        return ControlSignal.constant(self.u, self.support, dt, steps)

    def combine(self, other: SteadyPair, theta: float) -> SteadyPair:
        """Convex combination (1 - theta) * self + theta * other."""
        return SteadyPair(
            y=(1.0 - theta) * self.y + theta * other.y,
            u=(1.0 - theta) * self.u + theta * other.u,
            support=self.support,
            residual=max(self.residual, other.residual),
        )

    def scaled(self, alpha: float) -> SteadyPair:
        """Pair scaled by alpha."""
        return SteadyPair(
            y=alpha * self.y, u=alpha * self.u, support=self.support, residual=self.residual
        )


def _require_fredholm(op: DirichletOperator) -> None:
    if not check_fredholm(op):
        smallest = float(np.min(np.abs(op.eigenvalues)))
        raise FredholmError(
            f"0 is in the spectrum (min |lambda| = {smallest:.3g}); steady problem is ill-posed"
        )


def _inverse(op: DirichletOperator, f: FloatArray) -> FloatArray:
    return op.from_modal(op.to_modal(f) / op.eigenvalues)


def solve_steady_interior(
    op: DirichletOperator, u: npt.ArrayLike, chi: npt.ArrayLike
) -> SteadyPair:
    """Solve A0 y = chi * u."""
    _require_fredholm(op)
    u_arr = np.broadcast_to(np.asarray(u, dtype=np.float64), (op.n,)).copy()
    support = Interior(np.broadcast_to(np.asarray(chi, dtype=np.float64), (op.n,)))
    if not np.all(np.isfinite(u_arr)):
        raise NonFiniteInputError("steady control contains non-finite samples")

    rhs = support.chi * u_arr
    y = _inverse(op, rhs)
    residual = op.grid.l2(op.apply(y) - rhs)
    _LOGGER.debug("Interior steady solve: residual %.3g", residual)
    return SteadyPair(y=y, u=u_arr, support=support, residual=residual)


def solve_steady_boundary(
    op: DirichletOperator,
    u_left: float,
    u_right: float,
    *,
    support: Boundary | None = None,
) -> SteadyPair:
    """Solve -y'' + c y = 0 with Dirichlet values u_left, u_right.

    Written as y = lift + z with the affine lift of the boundary values and
    A0 z = -c * lift. An inactive end carries the value 0.
    """
    _require_fredholm(op)
    support = support or Boundary(True, True)
    if not np.all(np.isfinite([u_left, u_right])):
        raise NonFiniteInputError("boundary values must be finite")
    left = u_left if support.left else 0.0
    right = u_right if support.right else 0.0

    x = op.grid.x
    lift = left * (1.0 - x) + right * x
    z = _inverse(op, -op.c * lift)
    residual = op.grid.l2(op.apply(z) + op.c * lift)
    values = np.array([v for v, on in ((left, support.left), (right, support.right)) if on])
    _LOGGER.debug("Boundary steady solve (%g, %g): residual %.3g", left, right, residual)
    return SteadyPair(y=lift + z, u=values, support=support, residual=residual)


def check_lower_bound(pair: SteadyPair, sigma: float) -> float:
    """Return min_j y_j - sigma."""
    return float(np.min(pair.y) - sigma)


def require_same_kind(pair0: SteadyPair, pair1: SteadyPair) -> None:
    """Raise if two pairs cannot be linked."""
    if pair0.kind != pair1.kind or pair0.y.shape != pair1.y.shape:
        raise GridMismatchError("steady pairs differ in kind or grid")
    if pair0.u.shape != pair1.u.shape:
        raise GridMismatchError("steady controls differ in shape")
