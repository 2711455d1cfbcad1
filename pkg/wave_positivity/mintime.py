"""Minimal controllability times under control and state constraints.

Feasibility is decided on the step lattice for three regimes: no constraint,
nonnegative controls, nonnegative controls and states. Bisection over the
lattice brackets the infimal horizon. For the uncontrolled-potential string
driven from both ends the explicit controls and the constant minimal-time
controls are checked exactly by characteristics.
"""

from __future__ import annotations

import asyncio
import logging
import math
import time
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
from fractions import Fraction

import numpy as np
from scipy.optimize import linprog

from .const import (
    BISECT_UNCERTAINTY_STEPS,
    PROP51_LATTICE,
    TOL_FEAS_ABS,
    TOL_FEAS_REL,
    TOL_REACH,
    TOL_STATE,
)
from .controllability import (
    ControlProblem,
    Feasibility,
    FeasibilityResult,
    InputMap,
    Raw,
    SpatialBasis,
    assemble_input_map,
    classify,
    min_norm_control,
)
from .exceptions import BracketError, LatticeError
from .operator import DirichletOperator, FloatArray
from .propagator import (
    ControlSignal,
    PiecewiseLinearBoundaryData,
    Scalar,
    State,
    Support,
    dalembert,
    input_gain,
    march_modes,
    propagate,
)

_LOGGER = logging.getLogger(__name__)

STATE_STATIONS_T = 64
STATE_STATIONS_X = 128
STATE_REFINEMENTS = (1, 4)
LP_TOLERANCE = 1e-10
LP_OPTIMAL = 0
LP_INFEASIBLE = 2


class Regime(StrEnum):
    """Constraint regime of a minimal-time query."""

    UNCONSTRAINED = "unconstrained"
    CONTROL_NONNEG = "control_nonneg"
    STATE_NONNEG = "state_nonneg"


@dataclass(frozen=True, eq=False, kw_only=True)
class MinTimeQuery:
    """Endpoints, regime and search bracket of a minimal-time estimate."""

    op: DirichletOperator
    y_from: State
    y_to: State
    support: Support
    regime: Regime
    bracket: tuple[float, float]
    resolution: float | None = None
    dt: float | None = None
    mode_cut: int | None = None
    spatial_basis: SpatialBasis = SpatialBasis.HATS
    tol_state: float = TOL_STATE
    tol_reach: float = TOL_REACH
    tol_feas: float = TOL_FEAS_REL

    def __post_init__(self) -> None:
        """Fill the lattice step and validate the bracket."""
        dt = self.op.grid.h if self.dt is None else self.dt
        object.__setattr__(self, "dt", dt)
        resolution = dt if self.resolution is None else self.resolution
        object.__setattr__(self, "resolution", resolution)
        low, high = self.bracket
        if not 0.0 < low < high:
            raise BracketError(f"bracket ({low}, {high}) must satisfy 0 < T_lo < T_hi")
        if resolution < dt * (1.0 - 1e-12):
            raise LatticeError(f"resolution {resolution} is finer than dt={dt}")

    @property
    def step(self) -> float:
        """Lattice step."""
        assert self.dt is not None
        return self.dt

    @property
    def resolution_steps(self) -> int:
        """Resolution in lattice steps."""
        assert self.resolution is not None
        return max(1, round(self.resolution / self.step))

    def problem(self, T: float) -> ControlProblem:  # noqa: N803
        """Raw-basis control problem on horizon T."""
        return ControlProblem(
            op=self.op,
            T=T,
            support=self.support,
            dt=self.dt,
            mode_cut=self.mode_cut,
            temporal_basis=Raw(),
            spatial_basis=self.spatial_basis,
        )

    def with_regime(self, regime: Regime) -> MinTimeQuery:
        """Same query in another regime."""
        return replace(self, regime=regime)


@dataclass(frozen=True, eq=False, kw_only=True)
class Probe:
    """Verdict at one horizon."""

    T: float
    regime: Regime
    status: Feasibility
    residual: float
    control: ControlSignal | None = field(default=None, repr=False)
    min_state: float | None = None
    # state verdict not certified by the station program
    witness_based: bool = False

    @property
    def feasible(self) -> bool:
        """True for a feasible verdict."""
        return self.status is Feasibility.FEASIBLE

    def row(self) -> tuple[float, str, bool, float]:
        """Probe CSV row."""
        return (self.T, self.regime.value, self.feasible, self.residual)


def _witness_min_state(query: MinTimeQuery, control: ControlSignal) -> float:
    return propagate(query.op, query.y_from, control).min_position()


def _state_stations(
    query: MinTimeQuery, imap: InputMap, refine: int = 1
) -> tuple[FloatArray, FloatArray]:
    """Free positions and per-coefficient position responses on a station grid.

    Returns `free` of shape (P,) and `response` of shape (P, L * K) for P
    stations (stored times times a subsample of grid points). `refine`
    multiplies the number of station times.
    """
    prob = imap.problem
    op = query.op
    stride = max(1, prob.steps // (STATE_STATIONS_T * refine))
    cols = np.arange(0, op.n, max(1, op.n // STATE_STATIONS_X))
    phi = op.eigenvectors[cols]

    zeros = np.zeros((op.n, imap.nodes))
    a, _, _ = march_modes(
        op.eigenvalues, zeros, zeros, imap.theta[:, np.newaxis, :], prob.step, prob.steps,
        stride=stride,
    )
    gain = input_gain(op, prob.support) @ imap.profiles
    response = np.einsum("xk,kl,tkj->txlj", phi, gain, a, optimize=True)
    response = response.reshape(-1, imap.channels * imap.nodes)

    free_a, _, _ = march_modes(
        op.eigenvalues,
        op.to_modal(query.y_from.y),
        op.to_modal(query.y_from.v),
        None,
        prob.step,
        prob.steps,
        stride=stride,
    )
    free = (free_a @ phi.T).ravel()
    return free, response


def _state_program(
    query: MinTimeQuery, imap: InputMap, target: FloatArray, refine: int
) -> tuple[Feasibility, FloatArray, float]:
    """Nonnegative coefficients matching the target with nonnegative station positions.

    Minimizes the l1 misfit on the retained modes subject to hard station
    inequalities. An l1 optimum above sqrt(2M) times the threshold rules out
    every l2 residual under it, so that case is a certified infeasibility.
    """
    free, response = _state_stations(query, imap, refine)
    rows, unknowns = imap.matrix.shape
    eye = np.eye(rows)
    cost = np.concatenate([np.zeros(unknowns), np.ones(2 * rows)])
    result = linprog(
        cost,
        A_ub=np.hstack([-response, np.zeros((response.shape[0], 2 * rows))]),
        b_ub=free,
        A_eq=np.hstack([imap.matrix, eye, -eye]),
        b_eq=target,
        bounds=(0.0, None),
        method="highs",
        options={
            "primal_feasibility_tolerance": LP_TOLERANCE,
            "dual_feasibility_tolerance": LP_TOLERANCE,
        },
    )
    if result.status == LP_INFEASIBLE:
        return Feasibility.INFEASIBLE, np.zeros(unknowns), math.inf
    if result.status != LP_OPTIMAL:
        _LOGGER.warning("State program at T=%.4g stopped: %s", imap.problem.horizon, result.message)
        return Feasibility.INCONCLUSIVE, np.zeros(unknowns), math.inf

    coefficients = np.maximum(result.x[:unknowns], 0.0)
    residual = float(np.linalg.norm(imap.matrix @ coefficients - target))
    threshold = query.tol_feas * float(np.linalg.norm(target)) + TOL_FEAS_ABS
    if residual <= threshold:
        status = Feasibility.FEASIBLE
    elif result.fun > math.sqrt(rows) * threshold:
        status = Feasibility.INFEASIBLE
    else:
        status = Feasibility.INCONCLUSIVE
    _LOGGER.debug(
        "State program at T=%.4g (%d stations): l1 %.3g, residual %.3g, %s",
        imap.problem.horizon, free.size, result.fun, residual, status,
    )
    return status, coefficients, residual


def _state_regime(
    query: MinTimeQuery, imap: InputMap, target: FloatArray, first: FeasibilityResult
) -> Probe:
    T = imap.problem.horizon  # noqa: N806
    control = imap.signal(first.coefficients)
    lowest = _witness_min_state(query, control)
    if lowest >= -query.tol_state:
        return Probe(
            T=T, regime=query.regime, status=Feasibility.FEASIBLE, residual=first.residual,
            control=control, min_state=lowest,
        )

    for refine in STATE_REFINEMENTS:
        status, coefficients, residual = _state_program(query, imap, target, refine)
        if status is not Feasibility.FEASIBLE:
            return Probe(
                T=T, regime=query.regime, status=status, residual=residual,
                witness_based=status is Feasibility.INCONCLUSIVE,
            )
        control = imap.signal(coefficients)
        lowest = _witness_min_state(query, control)
        if lowest >= -query.tol_state:
            return Probe(
                T=T, regime=query.regime, status=Feasibility.FEASIBLE, residual=residual,
                control=control, min_state=lowest,
            )
        _LOGGER.debug("State dips to %.3g between stations at T=%.4g", lowest, T)
    # stations hold, the propagated state does not
    return Probe(
        T=T, regime=query.regime, status=Feasibility.INCONCLUSIVE, residual=residual,
        control=control, min_state=lowest, witness_based=True,
    )


def feasible_at(query: MinTimeQuery, T: float) -> Probe:  # noqa: N803
    """Decide reachability of y_to from y_from at lattice time T in the query's regime."""
    imap = assemble_input_map(query.problem(T))
    T = imap.problem.horizon  # noqa: N806
    if query.regime is Regime.UNCONSTRAINED:
        sol = min_norm_control(imap, query.y_from, query.y_to, tol_reach=query.tol_reach)
        return Probe(
            T=T,
            regime=query.regime,
            status=Feasibility.FEASIBLE if sol.reachable else Feasibility.INFEASIBLE,
            residual=sol.residual,
            control=sol.control,
        )

    target = imap.defect(query.y_from, query.y_to)
    result = classify(imap.matrix, target, 0.0, tol_feas=query.tol_feas)
    if result.status is Feasibility.INCONCLUSIVE:
        _LOGGER.warning("NNLS hit its iteration cap at T=%.4g (%s)", T, query.regime)
    if query.regime is Regime.CONTROL_NONNEG or not result.feasible:
        return Probe(
            T=T, regime=query.regime, status=result.status, residual=result.residual,
            control=imap.signal(result.coefficients),
        )
    return _state_regime(query, imap, target, result)


@dataclass(frozen=True, eq=False, kw_only=True)
class MinTimeEstimate:
    """Smallest feasible lattice time found by bisection."""

    regime: Regime
    estimate: float
    uncertainty: float
    bracket: tuple[float, float]
    probes: list[Probe] = field(repr=False)
    witness: ControlSignal | None = field(default=None, repr=False)

    def summary(self) -> dict[str, object]:
        """Scalar fields for the JSON report."""
        return {
            "estimate": self.estimate,
            "uncertainty": self.uncertainty,
            "probes": len(self.probes),
            "witness_based": any(p.witness_based for p in self.probes),
        }


Prober = Callable[[MinTimeQuery, float], Probe]


def bisect(query: MinTimeQuery, *, probe: Prober = feasible_at) -> MinTimeEstimate:
    """Lattice bisection on feasibility; inconclusive probes count as infeasible."""
    dt = query.step
    low = round(query.bracket[0] / dt)
    high = round(query.bracket[1] / dt)
    probes: list[Probe] = []

    def check(index: int) -> Probe:
        result = probe(query, index * dt)
        probes.append(result)
        _LOGGER.debug("Probe %s T=%.6g: %s", query.regime, index * dt, result.status)
        return result

    top = check(high)
    if not top.feasible:
        raise BracketError(f"{query.regime} infeasible at T_hi={high * dt:.6g}")
    if check(low).feasible:
        raise BracketError(f"{query.regime} already feasible at T_lo={low * dt:.6g}")

    witness = top.control
    while high - low > query.resolution_steps:
        mid = (low + high) // 2
        result = check(mid)
        if result.feasible:
            high, witness = mid, result.control
        else:
            low = mid
    estimate = high * dt
    _LOGGER.debug("Minimal time %s: %.6g after %d probes", query.regime, estimate, len(probes))
    return MinTimeEstimate(
        regime=query.regime,
        estimate=estimate,
        uncertainty=BISECT_UNCERTAINTY_STEPS * dt,
        bracket=query.bracket,
        probes=probes,
        witness=witness,
    )


async def estimate_regimes(
    query: MinTimeQuery,
    regimes: Iterable[Regime] = tuple(Regime),
    *,
    threads: int = 1,
) -> dict[Regime, MinTimeEstimate]:
    """Bisect several regimes concurrently in worker threads."""
    limit = asyncio.Semaphore(max(1, threads))

    async def run(regime: Regime) -> MinTimeEstimate:
        async with limit:
            return await asyncio.to_thread(bisect, query.with_regime(regime))

    wanted = list(regimes)
    results = await asyncio.gather(*(run(regime) for regime in wanted))
    return dict(zip(wanted, results, strict=True))


def _exact(value: Scalar) -> Fraction:
    return value if isinstance(value, Fraction) else Fraction(value)


def prop51_controls(
    y00: Scalar, y10: Scalar, T: Scalar  # noqa: N803
) -> tuple[PiecewiseLinearBoundaryData, PiecewiseLinearBoundaryData]:
    """Explicit nonnegative controls from (y00, 0) to (y10, 0) in time T > 1.

    u0 holds y00 on [0, 1] and then ramps to y10 at T; u1 ramps from y00 to
    y10 on [0, T - 1] and then holds y10.
    """
    if not T > 1:
        raise ValueError(f"explicit controls need T > 1, got {T}")
    if y00 < 0 or y10 < 0:
        raise ValueError("endpoint constants must be nonnegative")
    zero = 0 * T
    u0 = PiecewiseLinearBoundaryData((zero, zero + 1, T), (y00, y00, y10))
    u1 = PiecewiseLinearBoundaryData((zero, T - 1, T), (y00, y10, y10))
    return u0, u1


def prop51_min_time_controls(y00: Scalar, y10: Scalar, lam: Scalar) -> tuple[Scalar, Scalar]:
    """Constant controls ((1 - lam) y00 + lam y10, (1 - lam) y10 + lam y00)."""
    if not 0 <= lam <= 1:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return (1 - lam) * y00 + lam * y10, (1 - lam) * y10 + lam * y00


def _off_characteristic(T: Fraction, points: Sequence[Fraction]) -> list[Fraction]:  # noqa: N803
    # corner jumps travel on t + x and t - x integer
    return [x for x in points if (T + x).denominator != 1 and (T - x).denominator != 1]


def _exact_final(
    y00: Fraction,
    y10: Fraction,
    u0: PiecewiseLinearBoundaryData,
    u1: PiecewiseLinearBoundaryData,
    T: Fraction,  # noqa: N803
    lattice: int,
) -> bool:
    grid = [Fraction(k, lattice - 1) for k in range(lattice)]
    xs = np.array(_off_characteristic(T, grid), dtype=object)
    ts = np.full(xs.shape, T, dtype=object)
    y, yt = dalembert(y00, u0, u1, T, ts, xs, velocity=True)
    return bool(all(v == y10 for v in y) and all(v == 0 for v in yt))


def _lattice_min(
    y00: Scalar,
    u0: PiecewiseLinearBoundaryData,
    u1: PiecewiseLinearBoundaryData,
    T: Scalar,  # noqa: N803
    lattice: int,
) -> float:
    t = np.linspace(0.0, float(T), lattice)
    x = np.linspace(0.0, 1.0, lattice)
    tt, xx = np.meshgrid(t, x, indexing="ij")
    as_float = PiecewiseLinearBoundaryData
    f0 = as_float(tuple(float(b) for b in u0.breakpoints), tuple(float(v) for v in u0.values))
    f1 = as_float(tuple(float(b) for b in u1.breakpoints), tuple(float(v) for v in u1.values))
    y = dalembert(float(y00), f0, f1, float(T), tt, xx)
    return float(np.min(y))


@dataclass(frozen=True, kw_only=True)
class Prop51Check:
    """Exact checks of the explicit and minimal-time boundary controls."""

    y00: float
    y10: float
    T: float
    explicit_exact: bool
    explicit_min_state: float
    min_time_exact: bool
    family: dict[str, bool]
    family_min_state: float
    lattice: int
    wall_time: float

    @property
    def ok(self) -> bool:
        """All exact checks hold and no state dips below zero."""
        return (
            self.explicit_exact
            and self.min_time_exact
            and all(self.family.values())
            and self.explicit_min_state >= 0.0
            and self.family_min_state >= 0.0
        )

    def summary(self) -> dict[str, object]:
        """Fields for the JSON report."""
        return {
            "exact_final": (
                self.explicit_exact and self.min_time_exact and all(self.family.values())
            ),
            "explicit_exact": self.explicit_exact,
            "min_time_exact": self.min_time_exact,
            "min_state": min(self.explicit_min_state, self.family_min_state),
            "explicit_min_state": self.explicit_min_state,
            "family_min_state": self.family_min_state,
            "lattice": self.lattice,
        }


def verify_prop51(
    y00: Scalar = 1,
    y10: Scalar = 2,
    T: Scalar = 2,  # noqa: N803
    *,
    lattice: int = PROP51_LATTICE,
    lambdas: Sequence[Fraction] = tuple(Fraction(k, 4) for k in range(5)),
) -> Prop51Check:
    """Check the explicit controls at T and the constant-control family at time 1.

    Final states are compared in rational arithmetic at lattice points off the
    corner characteristics; nonnegativity is scanned on a lattice x lattice grid.
    """
    started = time.perf_counter()
    a, b, horizon = _exact(y00), _exact(y10), _exact(T)
    u0, u1 = prop51_controls(a, b, horizon)
    explicit_exact = _exact_final(a, b, u0, u1, horizon, lattice)
    explicit_min = _lattice_min(a, u0, u1, horizon, lattice)

    one = Fraction(1)
    family: dict[str, bool] = {}
    family_min = math.inf
    for lam in lambdas:
        left, right = prop51_min_time_controls(a, b, lam)
        c0 = PiecewiseLinearBoundaryData.constant(left, one)
        c1 = PiecewiseLinearBoundaryData.constant(right, one)
        family[str(lam)] = _exact_final(a, b, c0, c1, one, lattice)
        family_min = min(family_min, _lattice_min(a, c0, c1, one, lattice))

    check = Prop51Check(
        y00=float(a),
        y10=float(b),
        T=float(horizon),
        explicit_exact=explicit_exact,
        explicit_min_state=explicit_min,
        min_time_exact=family.get("0", False),
        family=family,
        family_min_state=family_min,
        lattice=lattice,
        wall_time=time.perf_counter() - started,
    )
    _LOGGER.debug("Explicit-control verification: %s", check.summary())
    return check
