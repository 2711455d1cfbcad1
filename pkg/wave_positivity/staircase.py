"""Staircase synthesis between steady states under a positivity margin.

The path between two steady states is cut into N0 hops between convex
combinations of the endpoints. Each hop blends the steady controls with rho on
(0, 1) and then cancels the remaining deviation with a small smooth control,
so every hop stays within the margin of the admissible cone.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .const import (
    DEFAULT_SMOOTHNESS,
    N0_CAP,
    STATE_MARGIN_SHARE,
    TOL_NONNEG,
    TOL_REACH,
    TOL_STATE_WAYPOINT,
)
from .controllability import (
    ControlProblem,
    ControlSolution,
    InputMap,
    Smooth,
    assemble_input_map,
    estimate_smooth_constant,
    smooth_null_control,
)
from .exceptions import (
    GridMismatchError,
    NotCoerciveError,
    PositivityMarginError,
    SynthesisError,
    UnreachableError,
    WavePositivityError,
)
from .operator import DirichletOperator, StateSpace, check_coercive, state_norm
from .propagator import Boundary, ControlSignal, State, Trajectory, propagate
from .report import SynthesisReport
from .steady import SteadyKind, SteadyPair, check_lower_bound, require_same_kind

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False, kw_only=True)
class StaircasePlan:
    """Waypoints, hop count and the deviation control shared by all hops.

    `deviation` null-controls the full jump pair0 - pair1; the hop from
    waypoint k to k + 1 uses it scaled by 1/N0.
    """

    op: DirichletOperator
    N0: int
    T0: float
    sigma: float
    delta: float
    C_est: float
    waypoints: list[SteadyPair] = field(repr=False)
    input_map: InputMap = field(repr=False)
    deviation: ControlSolution = field(repr=False)
    jump: float

    @property
    def pair0(self) -> SteadyPair:
        """Starting steady pair."""
        return self.waypoints[0]

    @property
    def pair1(self) -> SteadyPair:
        """Target steady pair."""
        return self.waypoints[-1]

    @property
    def hop_time(self) -> float:
        """Duration of one hop, T0 + 1."""
        return self.deviation.control.T

    @property
    def total_time(self) -> float:
        """N0 * (T0 + 1)."""
        return self.N0 * self.hop_time

    @property
    def space(self) -> StateSpace:
        """Norm used to size the hops."""
        return self.input_map.problem.state_space

    def with_steps(self, N0: int) -> StaircasePlan:
        """Same data cut into N0 hops."""
        pair0, pair1 = self.pair0, self.pair1
        return replace(self, N0=N0, waypoints=_waypoints(pair0, pair1, N0))


def _waypoints(pair0: SteadyPair, pair1: SteadyPair, N0: int) -> list[SteadyPair]:
    return [pair0.combine(pair1, k / N0) for k in range(N0 + 1)]


def _require_margin(pair: SteadyPair, sigma: float, name: str) -> None:
    if not sigma > 0.0:
        raise PositivityMarginError(f"positivity margin violated: sigma={sigma:g} must be > 0")
    worst = int(np.argmin(pair.u))
    if pair.u[worst] < sigma:
        raise PositivityMarginError(
            f"positivity margin violated: {name} control {pair.u[worst]:.6g} < sigma={sigma:g} "
            f"at index {worst}",
            location=worst,
        )


def plan(
    op: DirichletOperator,
    pair0: SteadyPair,
    pair1: SteadyPair,
    sigma: float,
    T0: float,
    *,
    mode_cut: int | None = None,
    smoothness: int = DEFAULT_SMOOTHNESS,
    input_map: InputMap | None = None,
    tol_reach: float = TOL_REACH,
) -> StaircasePlan:
    """Size the staircase between two steady pairs whose controls stay above sigma."""
    require_same_kind(pair0, pair1)
    _require_margin(pair0, sigma, "initial")
    _require_margin(pair1, sigma, "final")

    if input_map is None:
        problem = ControlProblem(
            op=op,
            T=T0,
            support=pair0.support,
            mode_cut=mode_cut,
            temporal_basis=Smooth(smoothness),
        )
        input_map = assemble_input_map(problem)

    gap = pair0.state - pair1.state
    try:
        deviation = smooth_null_control(
            input_map, gap, pair0.u - pair1.u, tol_reach=tol_reach
        ).require_reachable()
    except UnreachableError as err:
        raise SynthesisError(f"deviation cannot be cancelled in T0={T0}: {err}") from err

    jump = state_norm(op, gap, input_map.problem.state_space)
    steps1 = round(1.0 / input_map.problem.step)
    w_sup = float(np.abs(deviation.control.samples[steps1:]).max())
    c_est = w_sup / jump if jump > 0.0 else 0.0
    delta = sigma
    n0 = math.ceil(2.0 * c_est * jump / delta) + 1
    _LOGGER.debug(
        "Staircase plan: |y0 - y1|=%.4g C_est=%.4g delta=%.4g -> N0=%d", jump, c_est, delta, n0
    )
    return StaircasePlan(
        op=op,
        N0=n0,
        T0=T0,
        sigma=sigma,
        delta=delta,
        C_est=c_est,
        waypoints=_waypoints(pair0, pair1, n0),
        input_map=input_map,
        deviation=deviation,
        jump=jump,
    )


def sampled_constant(plan: StaircasePlan, seed: int, samples: int = 8) -> float:
    """Randomized estimate of the smooth-control constant, for reporting next to C_est."""
    return estimate_smooth_constant(plan.input_map, np.random.default_rng(seed), samples)


def step_control(plan: StaircasePlan, k: int) -> ControlSignal:
    """Hop control on (0, T0 + 1) from waypoint k to waypoint k + 1.

    rho(t) (u_k - u_{k+1}) + u_{k+1} on (0, 1), then u_{k+1} + w_k; the null
    control is linear in the deviation, so w_k is the shared one over N0.
    """
    if not 0 <= k < plan.N0:
        raise IndexError(f"hop {k} outside 0..{plan.N0 - 1}")
    base = plan.waypoints[k + 1].u
    samples = base[None, :] + plan.deviation.control.samples / plan.N0
    return ControlSignal(
        dt=plan.deviation.control.dt, samples=samples, support=plan.pair0.support
    )


def _retained_error(plan: StaircasePlan, state: State, target: State) -> float:
    prob = plan.input_map.problem
    return float(np.linalg.norm(prob.weighted_modes(state - target)))


def _stitch(parts: list[Trajectory]) -> Trajectory:
    first = parts[0]
    times = [first.times]
    a = [first.a]
    b = [first.b]
    shift = first.T
    for part in parts[1:]:
        times.append(part.times[1:] + shift)
        a.append(part.a[1:])
        b.append(part.b[1:])
        shift += part.T
    return Trajectory(
        op=first.op, times=np.concatenate(times), a=np.vstack(a), b=np.vstack(b)
    )


@dataclass
class _Run:
    controls: list[ControlSignal]
    trajectory: Trajectory
    final: State
    residuals: list[float]
    deviations: list[float]
    min_state: float


def _run_hops(plan: StaircasePlan, stride: int) -> _Run:
    state = plan.pair0.state
    controls: list[ControlSignal] = []
    parts: list[Trajectory] = []
    residuals: list[float] = []
    deviations: list[float] = []
    for k in range(plan.N0):
        control = step_control(plan, k)
        if control.min() < TOL_NONNEG:
            raise SynthesisError(
                f"hop {k}: control dips to {control.min():.6g} below zero", step=k
            )
        try:
            traj = propagate(plan.op, state, control, stride=stride)
        except WavePositivityError as err:
            raise SynthesisError(f"hop {k} failed: {err}", step=k) from err
        target = plan.waypoints[k + 1]
        state = traj.final
        residuals.append(_retained_error(plan, state, target.state))
        deviations.append(float(np.max(np.abs(traj.positions() - target.y))))
        controls.append(control)
        parts.append(traj)
    trajectory = _stitch(parts)
    return _Run(
        controls=controls,
        trajectory=trajectory,
        final=state,
        residuals=residuals,
        deviations=deviations,
        min_state=trajectory.min_position(),
    )


def _report(plan: StaircasePlan, run: _Run, started: float, **details: object) -> SynthesisReport:
    target = plan.pair1.state
    control = ControlSignal.concatenate(run.controls)
    scale = max(state_norm(plan.op, target, plan.space), 1e-300)
    full = state_norm(plan.op, run.final - target, plan.space) / scale
    report = SynthesisReport(
        control=control,
        final_state=run.final,
        min_control=control.min(),
        min_state=run.min_state,
        final_error=_retained_error(plan, run.final, target) / scale,
        final_error_full=full,
        step_residuals=run.residuals,
        total_time=plan.total_time,
        steps=plan.N0,
        wall_time=time.perf_counter() - started,
        trajectory=run.trajectory,
        details={
            "N0": plan.N0,
            "T0": plan.T0,
            "sigma": plan.sigma,
            "delta": plan.delta,
            "C_est": plan.C_est,
            "jump": plan.jump,
            "max_deviation": max(run.deviations, default=0.0),
            **details,
        },
    )
    if report.min_control < TOL_NONNEG:
        raise SynthesisError(f"synthesized control dips to {report.min_control:.6g}")
    return report


def synthesize(plan: StaircasePlan, *, stride: int = 1) -> SynthesisReport:
    """Concatenate the hop controls and check the result by propagation."""
    started = time.perf_counter()
    run = _run_hops(plan, stride)
    _LOGGER.debug(
        "Staircase synthesized: %d hops, max hop residual %.3g",
        plan.N0, max(run.residuals, default=0.0),
    )
    return _report(plan, run, started)


def synthesize_state_constrained(
    plan: StaircasePlan, *, cap: int = N0_CAP, stride: int = 1
) -> SynthesisReport:
    """Staircase whose hops stay within sigma / 2 of their target waypoint in the grid max.

    Waypoints are at least sigma by the discrete maximum principle, which is
    measured rather than assumed. Every hop is the full jump scaled by 1 / N0,
    so the worst deviation D / N0 fixes how many doublings reach the bound;
    N0 is multiplied by that power of two and the run is checked again.
    """
    started = time.perf_counter()
    if plan.pair0.kind is not SteadyKind.BOUNDARY:
        raise GridMismatchError("state-constrained staircase needs boundary control")
    support = plan.pair0.support
    if not (isinstance(support, Boundary) and support.left and support.right):
        raise GridMismatchError("state-constrained staircase needs both ends controlled")
    if not check_coercive(plan.op):
        raise NotCoerciveError("state-constrained staircase needs a coercive operator")
    for k, pair in enumerate(plan.waypoints):
        margin = check_lower_bound(pair, plan.sigma)
        if margin < TOL_STATE_WAYPOINT:
            raise PositivityMarginError(
                f"waypoint {k} state margin {margin:.3g} is negative", location=k
            )

    limit = STATE_MARGIN_SHARE * plan.sigma
    current = plan
    doublings = 0
    while True:
        run = _run_hops(current, stride)
        worst = max(run.deviations, default=0.0)
        _LOGGER.debug("State-constrained pass N0=%d: max deviation %.4g", current.N0, worst)
        if worst <= limit:
            break
        more = max(1, math.ceil(math.log2(worst / limit)))
        if current.N0 * 2**more > cap:
            raise SynthesisError(
                f"N0 cap {cap} reached with deviation {worst:.4g} > {limit:g}"
            )
        current = current.with_steps(current.N0 * 2**more)
        doublings += more

    report = _report(current, run, started, doublings=doublings, plain_N0=plan.N0,
        plain_total_time=plan.total_time,
    )
    if report.min_state is not None and report.min_state < 0.0:
        raise SynthesisError(f"state dips to {report.min_state:.6g}")
    return report
