"""Time evolution of the controlled wave equation.

Two integrators live here:

* an exact modal integrator. Every mode obeys a'' + lambda a = f(t) with f
  piecewise linear between time samples, which the Duhamel formula integrates
  without time discretization error.
* an exact d'Alembert evaluator for c = 0, constant initial position, zero
  initial velocity and piecewise-linear Dirichlet data at both ends. It works
  on floats or on ``fractions.Fraction`` object arrays.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np
import numpy.typing as npt

from .const import SERIES_TERMS, SERIES_THRESHOLD
from .exceptions import (
    GridMismatchError,
    LatticeError,
    NonFiniteInputError,
    NotCoerciveError,
    OutOfDomainError,
)
from .operator import DirichletOperator, FloatArray, check_coercive

_LOGGER = logging.getLogger(__name__)

Scalar = float | Fraction


@dataclass(frozen=True, eq=False)
class State:
    """Position/velocity pair (y, y_t) on the grid."""

    y: FloatArray
    v: FloatArray

    def __post_init__(self) -> None:
        """Coerce to float arrays and validate."""
        y = np.array(self.y, dtype=np.float64)
        v = np.array(self.v, dtype=np.float64)
        if y.shape != v.shape or y.ndim != 1:
            raise GridMismatchError(f"position {y.shape} and velocity {v.shape} differ")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(v))):
            raise NonFiniteInputError("state contains non-finite samples")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, n: int) -> State:
        """Null state."""
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def at_rest(cls, y: npt.ArrayLike) -> State:
        """State with the given position and zero velocity."""
        pos = np.asarray(y, dtype=np.float64)
        return cls(pos, np.zeros_like(pos))

    @property
    def n(self) -> int:
        """Grid size."""
        return int(self.y.size)

    def reversed(self) -> State:
        """Same position, negated velocity."""
        return State(self.y, -self.v)

    def __add__(self, other: State) -> State:
        return State(self.y + other.y, self.v + other.v)

    def __sub__(self, other: State) -> State:
        return State(self.y - other.y, self.v - other.v)

    def __mul__(self, factor: float) -> State:
        return State(factor * self.y, factor * self.v)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class Interior:
    """Interior control u(t, x) * chi(x)."""

    chi: FloatArray

    def __post_init__(self) -> None:
        """Validate the cutoff profile."""
        chi = np.array(self.chi, dtype=np.float64)
        if not np.all(np.isfinite(chi)):
            raise NonFiniteInputError("chi contains non-finite samples")
        if np.any(chi < 0.0) or np.any(chi > 1.0):
            raise ValueError("chi must take values in [0, 1]")
        object.__setattr__(self, "chi", chi)

    @property
    def width(self) -> int:
        """Control values per time instant."""
        return int(self.chi.size)

    @property
    def labels(self) -> list[str]:
        """Column labels for CSV export (grid index)."""
        return [str(j) for j in range(1, self.width + 1)]


@dataclass(frozen=True)
class Boundary:
    """Dirichlet control at the active ends of (0, 1)."""

    left: bool = True
    right: bool = True

    def __post_init__(self) -> None:
        """Require at least one active end."""
        if not (self.left or self.right):
            raise ValueError("boundary control needs at least one active end")

    @property
    def width(self) -> int:
        """Control values per time instant."""
        return int(self.left) + int(self.right)

    @property
    def labels(self) -> list[str]:
        """Column labels for CSV export."""
        return [name for name, on in (("left", self.left), ("right", self.right)) if on]


Support = Interior | Boundary


def input_gain(op: DirichletOperator, support: Support) -> FloatArray:
    """Matrix G with modal forcing f_k(t) = sum_j G[k, j] u_j(t).

    Boundary data enters the first and last grid equations as u / h^2, which is
    the affine lift of the Dirichlet values written on the interior unknowns.
    """
    phi = op.eigenvectors
    if isinstance(support, Interior):
        if support.width != op.n:
            raise GridMismatchError(f"chi has {support.width} samples, grid has n={op.n}")
        return op.grid.h * phi.T * support.chi[np.newaxis, :]
    columns = []
    if support.left:
        columns.append(phi[0] / op.grid.h)
    if support.right:
        columns.append(phi[-1] / op.grid.h)
    return np.stack(columns, axis=1)


@dataclass(frozen=True, eq=False, kw_only=True)
class ControlSignal:
    """Control sampled on a uniform time lattice, linear between samples."""

    dt: float
    samples: FloatArray
    support: Support

    def __post_init__(self) -> None:
        """Validate the sample matrix."""
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[:, np.newaxis]
        if self.dt <= 0.0:
            raise LatticeError(f"time step must be positive, got {self.dt}")
        if samples.shape[0] < 2 or samples.shape[1] != self.support.width:
            raise GridMismatchError(
                f"samples shape {samples.shape} does not fit support of width "
                f"{self.support.width}"
            )
        if not np.all(np.isfinite(samples)):
            raise NonFiniteInputError("control contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    @classmethod
    def constant(
        cls, value: npt.ArrayLike, support: Support, dt: float, steps: int
    ) -> ControlSignal:
        """Time-constant control."""
        row = np.broadcast_to(np.asarray(value, dtype=np.float64), (support.width,))
        return cls(dt=dt, samples=np.tile(row, (steps + 1, 1)), support=support)

    @property
    def steps(self) -> int:
        """Number of time steps."""
        return int(self.samples.shape[0] - 1)

    @property
    def T(self) -> float:
        """Horizon."""
        return self.steps * self.dt

    @property
    def times(self) -> FloatArray:
        """Sample times."""
        return np.arange(self.steps + 1) * self.dt

    def min(self) -> float:
        """Smallest sample."""
        return float(self.samples.min())

    def sup_norm(self) -> float:
        """Largest absolute sample."""
        return float(np.abs(self.samples).max())

    def reversed(self) -> ControlSignal:
        """Control run backwards in time."""
        return ControlSignal(dt=self.dt, samples=self.samples[::-1], support=self.support)

    def then(self, other: ControlSignal) -> ControlSignal:
        """Concatenate in time, sharing the junction sample."""
        if not math.isclose(self.dt, other.dt, rel_tol=1e-12):
            raise LatticeError(f"cannot concatenate dt={self.dt} with dt={other.dt}")
        samples = np.vstack([self.samples, other.samples[1:]])
        return ControlSignal(dt=self.dt, samples=samples, support=self.support)

    @classmethod
    def concatenate(cls, parts: Sequence[ControlSignal]) -> ControlSignal:
        """Concatenate several controls in time."""
        first, *rest = parts
        if not rest:
            return first
        samples = np.vstack([first.samples, *(p.samples[1:] for p in rest)])
        return cls(dt=first.dt, samples=samples, support=first.support)


def modal_kernels(
    lam: FloatArray, t: float
) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    """Return C, S, I1, I2 for the modal equation a'' + lam a = f at time t.

    C = cos(wt), S = sin(wt)/w (cosh and sinh for lam < 0), I1 = (1 - C)/lam and
    I2 = (t - S)/lam. Near lam * t^2 = 0 the Taylor series are used instead.
    """
    lam = np.asarray(lam, dtype=np.float64)
    x = lam * t * t
    c = np.empty_like(lam)
    s = np.empty_like(lam)
    i1 = np.empty_like(lam)
    i2 = np.empty_like(lam)

    small = np.abs(x) < SERIES_THRESHOLD
    if np.any(small):
        xs = -x[small]
        power = np.ones_like(xs)
        acc = np.zeros((4, xs.size))
        for j in range(SERIES_TERMS):
            for r in range(4):
                acc[r] += power / math.factorial(2 * j + r)
            power = power * xs
        c[small] = acc[0]
        s[small] = t * acc[1]
        i1[small] = t**2 * acc[2]
        i2[small] = t**3 * acc[3]

    pos = ~small & (lam > 0.0)
    if np.any(pos):
        w = np.sqrt(lam[pos])
        c[pos] = np.cos(w * t)
        s[pos] = np.sin(w * t) / w
    neg = ~small & (lam < 0.0)
    if np.any(neg):
        m = np.sqrt(-lam[neg])
        c[neg] = np.cosh(m * t)
        s[neg] = np.sinh(m * t) / m
    big = ~small
    i1[big] = (1.0 - c[big]) / lam[big]
    i2[big] = (t - s[big]) / lam[big]
    return c, s, i1, i2


def march_modes(
    lam: FloatArray,
    a0: FloatArray,
    b0: FloatArray,
    forcing: FloatArray | None,
    dt: float,
    steps: int,
    *,
    stride: int | None = 1,
) -> tuple[FloatArray, FloatArray, list[int]]:
    """Advance modal coordinates through `steps` exact Duhamel steps.

    `a0`, `b0` have leading axis over modes; trailing axes are independent
    columns. `forcing` has shape (steps + 1,) + a0.shape, linear between rows.
    With ``stride=None`` only the final state is returned.
    """
    c, s, i1, i2 = modal_kernels(lam, dt)
    shape = (lam.size,) + (1,) * (np.ndim(a0) - 1)
    c, s, i1, i2 = (k.reshape(shape) for k in (c, s, i1, i2))
    lam_s = lam.reshape(shape) * s

    a = np.array(a0, dtype=np.float64)
    b = np.array(b0, dtype=np.float64)
    kept_a = [a.copy()]
    kept_b = [b.copy()]
    kept_idx = [0]
    for i in range(steps):
        a_next = a * c + b * s
        b = b * c - lam_s * a
        if forcing is not None:
            f0 = forcing[i]
            df = (forcing[i + 1] - f0) / dt
            a_next += f0 * i1 + df * i2
            b += f0 * s + df * i1
        a = a_next
        if stride is not None and ((i + 1) % stride == 0 or i + 1 == steps):
            kept_a.append(a.copy())
            kept_b.append(b.copy())
            kept_idx.append(i + 1)
    if stride is None:
        return a[np.newaxis], b[np.newaxis], [steps]
    return np.stack(kept_a), np.stack(kept_b), kept_idx


@dataclass(frozen=True, eq=False, kw_only=True)
class Trajectory:
    """States stored along a propagation, in modal coordinates."""

    op: DirichletOperator
    times: FloatArray
    a: FloatArray = field(repr=False)
    b: FloatArray = field(repr=False)

    @property
    def T(self) -> float:
        """Final time."""
        return float(self.times[-1])

    def __len__(self) -> int:
        return int(self.times.size)

    def state(self, index: int) -> State:
        """Stored state by index."""
        return State(self.op.from_modal(self.a[index]), self.op.from_modal(self.b[index]))

    @property
    def initial(self) -> State:
        """State at t = 0."""
        return self.state(0)

    @property
    def final(self) -> State:
        """State at the final time."""
        return self.state(-1)

    def positions(self) -> FloatArray:
        """Grid positions, one row per stored time."""
        return self.a @ self.op.eigenvectors.T

    def velocities(self) -> FloatArray:
        """Grid velocities, one row per stored time."""
        return self.b @ self.op.eigenvectors.T

    def min_position(self) -> float:
        """Smallest position over all stored times and grid points."""
        return float(self.positions().min())


def _forcing(op: DirichletOperator, u: ControlSignal) -> FloatArray:
    gain = input_gain(op, u.support)
    return u.samples @ gain.T


def propagate(
    op: DirichletOperator,
    s0: State,
    u: ControlSignal,
    T: float | None = None,
    *,
    stride: int = 1,
) -> Trajectory:
    """Propagate s0 under the control u, storing every `stride`-th step."""
    if s0.n != op.n:
        raise GridMismatchError(f"state has n={s0.n}, operator has n={op.n}")
    if T is not None and not math.isclose(T, u.T, rel_tol=1e-9, abs_tol=1e-12):
        raise LatticeError(f"horizon {T} is not dt*steps = {u.T}")
    forcing = _forcing(op, u)
    a, b, idx = march_modes(
        op.eigenvalues,
        op.to_modal(s0.y),
        op.to_modal(s0.v),
        forcing,
        u.dt,
        u.steps,
        stride=stride,
    )
    _LOGGER.debug("Propagated %d steps of dt=%.4g (n=%d)", u.steps, u.dt, op.n)
    return Trajectory(op=op, times=np.asarray(idx) * u.dt, a=a, b=b)


def propagate_backward(op: DirichletOperator, s_end: State, u: ControlSignal) -> Trajectory:
    """Trajectory on (0, T) under u that ends at s_end.

    Runs the reversed control forward from (y, -y_t) and flips the result, so
    it relies on the group generated by the coercive operator.
    """
    if not check_coercive(op):
        raise NotCoerciveError("backward propagation needs a coercive operator")
    rev = propagate(op, s_end.reversed(), u.reversed())
    return Trajectory(op=op, times=rev.times, a=rev.a[::-1], b=-rev.b[::-1])


def free_evolve(op: DirichletOperator, s: State, tau: float) -> State:
    """Uncontrolled evolution over tau (any sign) in closed form."""
    c, sn, _, _ = modal_kernels(op.eigenvalues, tau)
    a0 = op.to_modal(s.y)
    b0 = op.to_modal(s.v)
    a = a0 * c + b0 * sn
    b = b0 * c - op.eigenvalues * sn * a0
    return State(op.from_modal(a), op.from_modal(b))


def sample_trajectory(traj: Trajectory, times: Sequence[float] | FloatArray) -> list[State]:
    """Stored states nearest to the requested times."""
    query = np.atleast_1d(np.asarray(times, dtype=np.float64))
    slack = 1e-9 * max(1.0, traj.T)
    if np.any(query < -slack) or np.any(query > traj.T + slack):
        raise LatticeError(f"times must lie in [0, {traj.T}]")
    idx = np.clip(np.searchsorted(traj.times, query), 1, len(traj) - 1)
    left = traj.times[idx - 1]
    right = traj.times[idx]
    idx = np.where(query - left <= right - query, idx - 1, idx)
    return [traj.state(int(i)) for i in idx]


@dataclass(frozen=True)
class PiecewiseLinearBoundaryData:
    """Continuous piecewise-linear signal given by its breakpoints.

    Values beyond the last breakpoint hold the last value. Evaluation uses the
    piece to the right of a breakpoint, so derivatives are right limits.
    """

    breakpoints: tuple[Scalar, ...]
    values: tuple[Scalar, ...]

    def __post_init__(self) -> None:
        """Validate the breakpoint sequence."""
        if len(self.breakpoints) != len(self.values) or len(self.breakpoints) < 2:
            raise ValueError("need matching breakpoints and values, at least two")
        if any(b1 <= b0 for b0, b1 in zip(self.breakpoints, self.breakpoints[1:], strict=False)):
            raise ValueError("breakpoints must be strictly increasing")

    @classmethod
    def constant(cls, value: Scalar, T: Scalar) -> PiecewiseLinearBoundaryData:
        """Constant signal on [0, T]."""
        return cls((0 * T, T), (value, value))

    @property
    def slopes(self) -> tuple[Scalar, ...]:
        """Slope of every piece."""
        bp, vals = self.breakpoints, self.values
        return tuple(
            (vals[i + 1] - vals[i]) / (bp[i + 1] - bp[i]) for i in range(len(bp) - 1)
        )

    def _piece(self, t: npt.NDArray[Any]) -> npt.NDArray[np.intp]:
        idx = np.zeros(t.shape, dtype=np.intp)
        for b in self.breakpoints[1:-1]:
            idx += t >= b
        return idx

    def __call__(self, t: npt.ArrayLike) -> npt.NDArray[Any]:
        arr = np.asarray(t)
        idx = self._piece(arr)
        last = self.breakpoints[-1]
        out = np.empty(arr.shape, dtype=arr.dtype if arr.dtype == object else np.float64)
        slopes = self.slopes
        for i in range(len(slopes)):
            mask = idx == i
            if np.any(mask):
                out[mask] = self.values[i] + slopes[i] * (arr[mask] - self.breakpoints[i])
        beyond = arr >= last
        if np.any(beyond):
            out[beyond] = self.values[-1]
        return out

    def derivative(self, t: npt.ArrayLike) -> npt.NDArray[Any]:
        """Right derivative, zero past the last breakpoint."""
        arr = np.asarray(t)
        idx = self._piece(arr)
        slopes = np.array(self.slopes, dtype=object if arr.dtype == object else np.float64)
        out = slopes[idx]
        out[arr >= self.breakpoints[-1]] = 0 * slopes[0]
        return out

    def sample(self, times: FloatArray) -> FloatArray:
        """Float samples on a time lattice."""
        return np.asarray(self(np.asarray(times, dtype=np.float64)), dtype=np.float64)


def boundary_signal(
    u0: PiecewiseLinearBoundaryData,
    u1: PiecewiseLinearBoundaryData,
    dt: float,
    steps: int,
) -> ControlSignal:
    """Sample endpoint data on the lattice as a two-ended boundary control."""
    times = np.arange(steps + 1) * dt
    samples = np.column_stack([u0.sample(times), u1.sample(times)])
    return ControlSignal(dt=dt, samples=samples, support=Boundary(True, True))


class _Characteristics:
    """Right-moving and left-moving profiles with y(t, x) = P(t + x) + Q(t - x)."""

    def __init__(
        self,
        y00: Scalar,
        u0: PiecewiseLinearBoundaryData,
        u1: PiecewiseLinearBoundaryData,
    ) -> None:
        self._half = y00 / 2
        self._u0 = u0
        self._u1 = u1

    def p(self, xi: npt.NDArray[Any], *, slope: bool) -> npt.NDArray[Any]:
        out = np.empty(xi.shape, dtype=xi.dtype)
        initial = xi < 1
        out[initial] = 0 * self._half if slope else self._half
        rest = ~initial
        if np.any(rest):
            arg = xi[rest]
            edge = self._u1.derivative(arg - 1) if slope else self._u1(arg - 1)
            out[rest] = edge - self.q(arg - 2, slope=slope)
        return out

    def q(self, eta: npt.NDArray[Any], *, slope: bool) -> npt.NDArray[Any]:
        out = np.empty(eta.shape, dtype=eta.dtype)
        initial = eta < 0
        out[initial] = 0 * self._half if slope else self._half
        rest = ~initial
        if np.any(rest):
            arg = eta[rest]
            edge = self._u0.derivative(arg) if slope else self._u0(arg)
            out[rest] = edge - self.p(arg, slope=slope)
        return out


def dalembert(
    y00: Scalar,
    u0: PiecewiseLinearBoundaryData,
    u1: PiecewiseLinearBoundaryData,
    T: Scalar,
    t: npt.ArrayLike,
    x: npt.ArrayLike,
    *,
    velocity: bool = False,
) -> npt.NDArray[Any] | tuple[npt.NDArray[Any], npt.NDArray[Any]]:
    """Evaluate y (and optionally y_t) of the boundary-controlled string with c = 0.

    Initial data is (y00, 0); u0 acts at x = 0 and u1 at x = 1. Characteristics
    are traced back to the initial line or to a boundary; jumps are resolved
    from the right in the traced parameter. Fraction inputs give exact values.
    """
    t_arr, x_arr = np.broadcast_arrays(np.asarray(t), np.asarray(x))
    if t_arr.dtype == object or x_arr.dtype == object:
        t_arr = t_arr.astype(object)
        x_arr = x_arr.astype(object)
    else:
        t_arr = t_arr.astype(np.float64)
        x_arr = x_arr.astype(np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > T) or np.any(x_arr < 0) or np.any(x_arr > 1):
        raise OutOfDomainError(f"query points must lie in [0, {T}] x [0, 1]")

    chars = _Characteristics(y00, u0, u1)
    y = chars.p(t_arr + x_arr, slope=False) + chars.q(t_arr - x_arr, slope=False)
    if not velocity:
        return y
    yt = chars.p(t_arr + x_arr, slope=True) + chars.q(t_arr - x_arr, slope=True)
    return y, yt
