"""Discrete Dirichlet operator -d^2/dx^2 + c(x) on the unit interval."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import StrEnum
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt
from scipy.linalg import eigh_tridiagonal

from .const import TOL_EIGEN_RESIDUAL, TOL_FREDHOLM
from .exceptions import GridMismatchError, NonFiniteInputError, NotCoerciveError

if TYPE_CHECKING:
    from .propagator import State

_LOGGER = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


class StateSpace(StrEnum):
    """Norm placed on position/velocity pairs."""

    # H^1_0 x L^2, natural for interior control
    ENERGY = "energy"
    # L^2 x H^-1, where boundary-controlled solutions live
    WEAK = "weak"


@dataclass(frozen=True)
class Grid:
    """Uniform interior grid x_j = j*h, j = 1..n, of (0, 1)."""

    n: int

    def __post_init__(self) -> None:
        """Validate the point count."""
        if self.n < 2:
            raise ValueError(f"grid needs at least 2 interior points, got {self.n}")

    @property
    def h(self) -> float:
        """Grid spacing."""
        return 1.0 / (self.n + 1)

    @cached_property
    def x(self) -> FloatArray:
        """Interior coordinates."""
        return np.arange(1, self.n + 1, dtype=np.float64) * self.h

    def inner(self, f: FloatArray, g: FloatArray) -> float:
        """Discrete L^2 inner product h * sum(f * g)."""
        return float(self.h * np.dot(f, g))

    def l2(self, f: FloatArray) -> float:
        """Discrete L^2 norm."""
        return float(np.sqrt(self.h * np.dot(f, f)))

    def check(self, *arrays: FloatArray) -> None:
        """Raise if any array is off-grid or non-finite."""
        for arr in arrays:
            if arr.shape[-1] != self.n:
                raise GridMismatchError(
                    f"array of length {arr.shape[-1]} does not match grid with n={self.n}"
                )
            if not np.all(np.isfinite(arr)):
                raise NonFiniteInputError("array contains non-finite samples")


@dataclass(frozen=True, kw_only=True)
class DirichletOperator:
    """Symmetric tridiagonal operator with its full eigendecomposition.

    Eigenvectors are stored as columns, orthonormal for the discrete inner
    product h * sum(f * g), with a positive first entry.
    """

    grid: Grid
    c: FloatArray
    eigenvalues: FloatArray
    eigenvectors: FloatArray = field(repr=False)

    @property
    def n(self) -> int:
        """Interior point count."""
        return self.grid.n

    @property
    def diagonal(self) -> FloatArray:
        """Main diagonal 2/h^2 + c."""
        return 2.0 / self.grid.h**2 + self.c

    @property
    def off_diagonal(self) -> float:
        """Off-diagonal entry -1/h^2."""
        return -1.0 / self.grid.h**2

    def matrix(self) -> FloatArray:
        """Dense operator matrix."""
        off = np.full(self.n - 1, self.off_diagonal)
        return np.diag(self.diagonal) + np.diag(off, 1) + np.diag(off, -1)

    def apply(self, y: FloatArray) -> FloatArray:
        """Apply A0 to a grid function with zero Dirichlet values."""
        out = self.diagonal * y
        out[:-1] += self.off_diagonal * y[1:]
        out[1:] += self.off_diagonal * y[:-1]
        return out

    def to_modal(self, f: FloatArray) -> FloatArray:
        """Modal coefficients <f, phi_k> (works column-wise on 2-D input)."""
        return self.grid.h * (self.eigenvectors.T @ f)

    def from_modal(self, a: FloatArray) -> FloatArray:
        """Grid function sum_k a_k phi_k."""
        return self.eigenvectors @ a

    def weights(self, space: StateSpace) -> tuple[FloatArray, FloatArray]:
        """Position and velocity weights turning modal coefficients into the norm."""
        root = np.sqrt(np.maximum(np.abs(self.eigenvalues), TOL_FREDHOLM))
        if space is StateSpace.ENERGY:
            return root, np.ones(self.n)
        return np.ones(self.n), 1.0 / root


def assemble(c_samples: npt.ArrayLike, n: int) -> DirichletOperator:
    """Build the discrete operator for a potential sampled at the grid points."""
    grid = Grid(n)
    c = np.asarray(c_samples, dtype=np.float64).ravel()
    if c.size == 1:
        c = np.full(n, float(c[0]))
    elif c.size != n:
        raise GridMismatchError(f"potential has {c.size} samples, expected 1 or {n}")
    if not np.all(np.isfinite(c)):
        raise NonFiniteInputError("potential samples must be finite")

    diagonal = 2.0 / grid.h**2 + c
    off = np.full(n - 1, -1.0 / grid.h**2)
    eigenvalues, vectors = eigh_tridiagonal(diagonal, off)
    vectors = vectors / np.sqrt(grid.h)
    vectors *= np.where(vectors[0] < 0.0, -1.0, 1.0)

    _LOGGER.debug(
        "Assembled operator n=%d lambda_1=%.6g lambda_n=%.6g", n, eigenvalues[0], eigenvalues[-1]
    )
    op = DirichletOperator(grid=grid, c=c, eigenvalues=eigenvalues, eigenvectors=vectors)
    if not check_eigenpairs(op):
        _LOGGER.warning(
            "Eigenpair residual %.3g exceeds %.0e", eigen_residual(op), TOL_EIGEN_RESIDUAL
        )
    return op


def eigen_residual(op: DirichletOperator) -> float:
    """Largest ||A0 phi_k - lambda_k phi_k|| over k, relative to the largest |lambda_k|."""
    vectors = op.eigenvectors
    residual = op.diagonal[:, None] * vectors - vectors * op.eigenvalues
    residual[:-1] += op.off_diagonal * vectors[1:]
    residual[1:] += op.off_diagonal * vectors[:-1]
    worst = float(np.sqrt(op.grid.h * np.max(np.sum(residual * residual, axis=0))))
    return worst / max(float(np.max(np.abs(op.eigenvalues))), 1.0)


def check_eigenpairs(op: DirichletOperator, tol: float = TOL_EIGEN_RESIDUAL) -> bool:
    """Return True if every stored eigenpair solves A0 phi = lambda phi to within tol."""
    return eigen_residual(op) <= tol


def check_fredholm(op: DirichletOperator, tol: float = TOL_FREDHOLM) -> bool:
    """Return True if zero is not an eigenvalue."""
    return bool(np.min(np.abs(op.eigenvalues)) > tol)


def check_coercive(op: DirichletOperator) -> bool:
    """Return True if every eigenvalue is strictly positive."""
    return bool(op.eigenvalues[0] > 0.0)


@dataclass(frozen=True)
class EnergyNorm:
    """Energy norm attached to an operator."""

    operator: DirichletOperator
    coercive: bool

    @classmethod
    def of(cls, op: DirichletOperator) -> EnergyNorm:
        """Create the energy norm of an operator."""
        return cls(op, check_coercive(op))


def energy(state: State, norm: EnergyNorm) -> float:
    """Return sum lambda_k a_k^2 + sum b_k^2 for a position/velocity pair."""
    if not norm.coercive:
        raise NotCoerciveError(
            f"energy is not a norm: lambda_1={norm.operator.eigenvalues[0]:.6g} <= 0"
        )
    op = norm.operator
    op.grid.check(state.y, state.v)
    a = op.to_modal(state.y)
    b = op.to_modal(state.v)
    return float(np.dot(op.eigenvalues, a * a) + np.dot(b, b))


def state_norm(op: DirichletOperator, state: State, space: StateSpace) -> float:
    """Norm of a state in the chosen state space (all modes)."""
    wy, wv = op.weights(space)
    pos = np.linalg.norm(wy * op.to_modal(state.y))
    vel = np.linalg.norm(wv * op.to_modal(state.v))
    return float(np.hypot(pos, vel))
