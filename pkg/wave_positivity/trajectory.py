"""Linking states on two controlled trajectories with nonnegative controls.

The link runs in three phases: a rho-blend from the first trajectory's control
to a positive constant sigma, sigma plus a small null control that cancels
the junction defect, and a zeta-blend from sigma onto the second trajectory's
control. The last phase is matched by propagating backwards from the target.
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from .const import (
    BUMP_ANCHOR,
    DEFAULT_SIGMA,
    DEFAULT_SMOOTHNESS,
    DEFAULT_T0,
    TOL_FULL,
    TOL_REACH,
)
from .controllability import (
    ControlProblem,
    InputMap,
    Smooth,
    assemble_input_map,
    orbit_gain,
)
from .cutoffs import rho, smooth_bump, zeta
from .exceptions import (
    GridMismatchError,
    LatticeError,
    NotCoerciveError,
    PositivityMarginError,
    SynthesisError,
)
from .operator import DirichletOperator, FloatArray, check_coercive, state_norm
from .propagator import (
    ControlSignal,
    Interior,
    State,
    Support,
    Trajectory,
    free_evolve,
    propagate,
    propagate_backward,
)
from .report import SynthesisReport
from .steady import SteadyPair, solve_steady_boundary, solve_steady_interior

_LOGGER = logging.getLogger(__name__)

ControlLaw = Callable[[FloatArray], FloatArray]
MAX_STORED_STATES = 4000
# steady and bump-driven trajectories are C-infinity in time
SMOOTH_ANY = 2**31 - 1


@dataclass(frozen=True, eq=False, kw_only=True)
class ControlledTrajectory:
    """A controlled solution known through its control law and its state at the anchor.

    `control` maps absolute times to samples of shape (len(t), width).
    Smoothness is asserted by the constructor, not checked.
    """

    control: ControlLaw
    anchor: float
    state_at_anchor: State
    support: Support
    smoothness: int = DEFAULT_SMOOTHNESS

    def evaluate(self, times: npt.ArrayLike) -> FloatArray:
        """Control samples at absolute times; negative samples are rejected."""
        t = np.atleast_1d(np.asarray(times, dtype=np.float64))
        samples = np.asarray(self.control(t), dtype=np.float64).reshape(t.size, -1)
        if samples.shape[1] != self.support.width:
            raise GridMismatchError(
                f"trajectory control has width {samples.shape[1]}, support {self.support.width}"
            )
        worst = int(np.argmin(samples.min(axis=1)))
        if samples[worst].min() < 0.0:
            raise PositivityMarginError(
                f"negative trajectory control sample {samples[worst].min():.6g} "
                f"at t={t[worst]:.6g}",
                location=worst,
            )
        return samples

    def floor(self, times: npt.ArrayLike) -> float:
        """Smallest control sample over the given times."""
        return float(self.evaluate(times).min())


def steady_trajectory(pair: SteadyPair, anchor: float = 0.0) -> ControlledTrajectory:
    """Constant-in-time trajectory through a steady pair."""
    u = pair.u.copy()

    def law(t: FloatArray) -> FloatArray:
        return np.tile(u, (np.size(t), 1))

    return ControlledTrajectory(
        control=law, anchor=anchor, state_at_anchor=pair.state, support=pair.support,
        smoothness=SMOOTH_ANY,
    )


def _sigma_pair(op: DirichletOperator, support: Support, sigma: FloatArray) -> SteadyPair:
    if isinstance(support, Interior):
        return solve_steady_interior(op, sigma, support.chi)
    values = iter(sigma)
    left = float(next(values)) if support.left else 0.0
    right = float(next(values)) if support.right else 0.0
    return solve_steady_boundary(op, left, right, support=support)


def bump_trajectory(
    op: DirichletOperator,
    support: Support,
    sigma: float,
    *,
    anchor: float = BUMP_ANCHOR,
    dt: float | None = None,
) -> ControlledTrajectory:
    """Trajectory of u(t) = sigma (1 + t^2 bump(t)), at rest in steady(sigma) for t <= 0.

    The bump is C-infinity and supported in (0, 1), so the anchor state inside
    the bump has nonzero velocity.
    """
    dt = op.grid.h if dt is None else dt
    steps = round(anchor / dt)
    if steps < 1 or abs(steps * dt - anchor) > 1e-9:
        raise LatticeError(f"anchor {anchor} is not a positive multiple of dt={dt}")
    base = np.full(support.width, sigma)

    def law(t: FloatArray) -> FloatArray:
        t = np.asarray(t, dtype=np.float64)
        profile = sigma * (1.0 + t * t * smooth_bump(t))
        return profile[:, None] * np.ones((1, support.width))

    times = np.arange(steps + 1) * dt
    start = _sigma_pair(op, support, base).state
    drive = ControlSignal(dt=dt, samples=law(times), support=support)
    state = propagate(op, start, drive, stride=steps).final
    return ControlledTrajectory(
        control=law, anchor=anchor, state_at_anchor=state, support=support, smoothness=SMOOTH_ANY
    )


def _validate_sigma(sigma_ctrl: npt.ArrayLike, support: Support) -> FloatArray:
    sigma = np.broadcast_to(np.asarray(sigma_ctrl, dtype=np.float64), (support.width,)).copy()
    if np.any(sigma <= 0.0):
        raise PositivityMarginError("sigma control must be strictly positive")
    return sigma


def build_phase1(
    traj0: ControlledTrajectory, sigma_ctrl: npt.ArrayLike, dt: float
) -> ControlSignal:
    """rho(t) u0(t + tau0) + (1 - rho(t)) sigma on (0, 1)."""
    sigma = _validate_sigma(sigma_ctrl, traj0.support)
    times = np.arange(round(1.0 / dt) + 1) * dt
    u0 = traj0.evaluate(traj0.anchor + times)
    weight = rho(times)[:, None]
    samples = weight * u0 + (1.0 - weight) * sigma[None, :]
    return ControlSignal(dt=dt, samples=samples, support=traj0.support)


@dataclass(frozen=True, eq=False, kw_only=True)
class Phase3:
    """Final blend and the reference trajectory matched backwards from the target."""

    control: ControlSignal
    reference: Trajectory = field(repr=False)

    @property
    def start(self) -> State:
        """Reference state where the final phase begins."""
        return self.reference.initial


def build_phase3(
    op: DirichletOperator,
    traj1: ControlledTrajectory,
    sigma_ctrl: npt.ArrayLike,
    dt: float,
) -> Phase3:
    """zeta(s - 1) u1(s - 1 + tau1) + (1 - zeta(s - 1)) sigma for local time s in (0, 1).

    The reference trajectory ends at the anchor state of traj1 and is obtained
    by backward propagation, which needs a coercive operator.
    """
    if not check_coercive(op):
        raise NotCoerciveError("final phase needs a coercive operator for backward propagation")
    sigma = _validate_sigma(sigma_ctrl, traj1.support)
    local = np.arange(round(1.0 / dt) + 1) * dt
    u1 = traj1.evaluate(traj1.anchor + local - 1.0)
    weight = zeta(local - 1.0)[:, None]
    samples = weight * u1 + (1.0 - weight) * sigma[None, :]
    control = ControlSignal(dt=dt, samples=samples, support=traj1.support)
    reference = propagate_backward(op, traj1.state_at_anchor, control)
    return Phase3(control=control, reference=reference)


@dataclass(frozen=True, eq=False, kw_only=True)
class SmallControl:
    """Null control split over N segments of length T0.

    `sup_bound` is the proven sup norm of a single full share, so every
    segment obeys ||w|| <= sup_bound / N. `gain * bound` is the coarser
    bound from the defect norm alone.
    """

    control: ControlSignal
    segments: int
    gain: float
    defect_norm: float
    bound: float
    sup_bound: float


def segment_count(gain: float, bound: float, epsilon: float) -> int:
    """Smallest power of two N with N > gain * bound / epsilon."""
    ratio = gain * bound / epsilon
    if ratio <= 0.0:
        return 1
    return 2 ** max(0, math.floor(math.log2(ratio)) + 1)


def small_control_map(
    op: DirichletOperator,
    support: Support,
    T0: float = DEFAULT_T0,  # noqa: N803
    *,
    mode_cut: int | None = None,
    smoothness: int = DEFAULT_SMOOTHNESS,
    dt: float | None = None,
) -> InputMap:
    """Smooth-basis input map used for every segment."""
    problem = ControlProblem(
        op=op,
        T=T0,
        support=support,
        dt=dt,
        mode_cut=mode_cut,
        temporal_basis=Smooth(smoothness),
    )
    return assemble_input_map(problem)


def small_null_control(
    eta0: State,
    epsilon: float,
    input_map: InputMap,
    *,
    norm_bound: float | None = None,
    amplitudes: FloatArray | None = None,
    segments: int | None = None,
) -> SmallControl:
    """Control with sup norm at most epsilon that steers eta0 to rest on the retained modes.

    Segment k cancels the share (1/N) S(k T0) eta0, so after N segments
    nothing is left. Free flow keeps the mode amplitudes of every share, so
    orbit_gain over the amplitudes of eta0 (or the given dominating ones)
    bounds each segment by sup_bound / N and fixes N.
    """
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    prob = input_map.problem
    length = prob.horizon
    gain = input_map.gain
    defect_norm = float(np.linalg.norm(prob.weighted_modes(eta0)))
    bound = defect_norm if norm_bound is None else norm_bound
    if bound < defect_norm * (1.0 - 1e-12):
        raise ValueError(f"norm bound {bound:.6g} below the defect norm {defect_norm:.6g}")
    own = prob.mode_amplitudes(eta0)
    amps = own if amplitudes is None else np.asarray(amplitudes, dtype=np.float64)
    if np.any(amps < own * (1.0 - 1e-12) - 1e-300):
        raise ValueError("mode amplitudes do not dominate those of the defect")
    if not check_coercive(prob.op):
        raise NotCoerciveError("segment sizing needs a coercive operator")
    sup_bound = orbit_gain(input_map, amps)
    count = segment_count(1.0, sup_bound, epsilon) if segments is None else segments

    parts = []
    for k in range(count):
        share = free_evolve(prob.op, eta0, k * length) * (1.0 / count)
        coefficients = input_map.pinv @ (-prob.free_final(share))
        parts.append(input_map.signal(coefficients))
    control = ControlSignal.concatenate(parts)
    _LOGGER.debug(
        "Small null control: N=%d segments, sup bound %.4g, gain %.4g, defect %.4g, "
        "sup %.4g (epsilon %.4g)",
        count, sup_bound, gain, defect_norm, control.sup_norm(), epsilon,
    )
    return SmallControl(
        control=control,
        segments=count,
        gain=gain,
        defect_norm=defect_norm,
        bound=bound,
        sup_bound=sup_bound,
    )


def _same_support(first: Support, second: Support) -> bool:
    if isinstance(first, Interior) and isinstance(second, Interior):
        return bool(np.array_equal(first.chi, second.chi))
    return first == second


def default_sigma(
    traj0: ControlledTrajectory,
    traj1: ControlledTrajectory,
    dt: float,
    user_floor: float = 0.0,
) -> float:
    """Half the smaller control floor on the blend windows, at least user_floor, else 1."""
    window = np.arange(round(1.0 / dt) + 1) * dt
    floor0 = traj0.floor(traj0.anchor + window)
    floor1 = traj1.floor(traj1.anchor + window - 1.0)
    sigma = max(0.5 * min(floor0, floor1), user_floor)
    return sigma if sigma > 0.0 else DEFAULT_SIGMA


@dataclass(frozen=True, eq=False, kw_only=True)
class _LinkEnds:
    """Everything of a link that does not depend on the mode cut."""

    op: DirichletOperator
    traj0: ControlledTrajectory
    traj1: ControlledTrajectory
    sigma: FloatArray
    epsilon: float
    dt: float
    phase1: ControlSignal
    y1: State
    phase3: Phase3
    steady_sigma: State


def _link_once(ends: _LinkEnds, input_map: InputMap, tol_reach: float) -> SynthesisReport:
    started = time.perf_counter()
    op, sigma, dt = ends.op, ends.sigma, ends.dt
    support = ends.traj0.support
    prob = input_map.problem
    space = prob.state_space
    phase1, phase3 = ends.phase1, ends.phase3

    # junction defect is bounded before the duration is known; free flow keeps amplitudes
    head = ends.y1 - ends.steady_sigma
    tail = phase3.start - ends.steady_sigma
    amplitudes = prob.mode_amplitudes(head) + prob.mode_amplitudes(tail)
    bound = float(
        np.linalg.norm(prob.weighted_modes(head)) + np.linalg.norm(prob.weighted_modes(tail))
    )
    sup_bound = orbit_gain(input_map, amplitudes)
    count = segment_count(1.0, sup_bound, ends.epsilon)
    t_bar = 1.0 + count * prob.horizon
    reference_at_1 = ends.steady_sigma + free_evolve(op, tail, 1.0 - t_bar)
    eta0 = ends.y1 - reference_at_1
    small = small_null_control(
        eta0, ends.epsilon, input_map, norm_bound=bound, amplitudes=amplitudes, segments=count
    )

    middle = ControlSignal(
        dt=dt, samples=small.control.samples + sigma[None, :], support=support
    )
    control = ControlSignal.concatenate([phase1, middle, phase3.control])
    if control.min() < 0.0:
        raise SynthesisError(
            f"link control dips to {control.min():.6g}; epsilon={ends.epsilon:g} is too large"
        )

    y_start = ends.traj0.state_at_anchor
    stride = max(1, control.steps // MAX_STORED_STATES)
    traj = propagate(op, y_start, control, stride=stride)
    target = ends.traj1.state_at_anchor
    retained = float(np.linalg.norm(prob.weighted_modes(traj.final - target)))
    target_norm = float(np.linalg.norm(prob.weighted_modes(target)))
    if retained > tol_reach * (1.0 + target_norm):
        raise SynthesisError(f"link missed the target by {retained:.3g} on the retained modes")
    full = state_norm(op, traj.final - target, space)
    full_relative = full / (1.0 + state_norm(op, target, space))

    end1 = phase1.steps
    end2 = end1 + middle.steps
    _LOGGER.debug(
        "Link M=%d: T=%.4g, N=%d, min control %.4g, retained error %.3g, full error %.3g",
        prob.M, control.T, count, control.min(), retained, full_relative,
    )
    return SynthesisReport(
        control=control,
        final_state=traj.final,
        min_control=control.min(),
        min_state=traj.min_position(),
        final_error=retained,
        final_error_full=full,
        total_time=control.T,
        steps=3,
        wall_time=time.perf_counter() - started,
        trajectory=traj,
        phases={"phase1": (0, end1), "phase2": (end1, end2), "phase3": (end2, control.steps)},
        details={
            "sigma": float(sigma.min()),
            "epsilon": ends.epsilon,
            "segments": count,
            "segments_uniform": segment_count(input_map.gain, bound, ends.epsilon),
            "T_bar": t_bar,
            "defect_norm": small.defect_norm,
            "defect_bound": bound,
            "gain": small.gain,
            "sup_bound": sup_bound,
            "phase2_sup": small.control.sup_norm(),
            "mode_cut": prob.M,
            "full_relative": full_relative,
            "space": space.value,
        },
    )


def link(
    op: DirichletOperator,
    traj0: ControlledTrajectory,
    traj1: ControlledTrajectory,
    sigma_ctrl: npt.ArrayLike | None = None,
    epsilon: float | None = None,
    *,
    T0: float = DEFAULT_T0,  # noqa: N803
    mode_cut: int | None = None,
    dt: float | None = None,
    input_map: InputMap | None = None,
    tol_reach: float = TOL_REACH,
    tol_full: float | None = TOL_FULL,
) -> SynthesisReport:
    """Nonnegative control from the anchor state of traj0 to that of traj1.

    The retained modes must meet tol_reach or the link fails. Modes above
    the cut evolve freely; while the full-space error relative to
    1 + ||target|| exceeds tol_full the mode cut doubles, up to n. The
    report with the smallest full-space error is returned and
    details["full_relative"] tells whether tol_full was met. A given
    input_map fixes the mode cut.
    """
    if not _same_support(traj0.support, traj1.support):
        raise GridMismatchError("trajectories use different control supports")
    support = traj0.support
    dt = op.grid.h if dt is None else dt
    if sigma_ctrl is None:
        sigma_ctrl = default_sigma(traj0, traj1, dt)
    sigma = _validate_sigma(sigma_ctrl, support)
    margin = float(sigma.min())
    epsilon = 0.5 * margin if epsilon is None else epsilon
    if epsilon > 0.5 * margin * (1.0 + 1e-12):
        raise PositivityMarginError(
            f"epsilon={epsilon:g} exceeds half the sigma margin {margin:g}"
        )

    phase1 = build_phase1(traj0, sigma, dt)
    y1 = propagate(op, traj0.state_at_anchor, phase1, stride=phase1.steps).final
    ends = _LinkEnds(
        op=op,
        traj0=traj0,
        traj1=traj1,
        sigma=sigma,
        epsilon=epsilon,
        dt=dt,
        phase1=phase1,
        y1=y1,
        phase3=build_phase3(op, traj1, sigma, dt),
        steady_sigma=_sigma_pair(op, support, sigma).state,
    )
    if input_map is not None:
        return _link_once(ends, input_map, tol_reach)

    current = small_control_map(op, support, T0, mode_cut=mode_cut, dt=dt)
    best = _link_once(ends, current, tol_reach)
    while tol_full is not None and best.details["full_relative"] > tol_full:
        cut = current.problem.M
        if cut >= op.n:
            break
        try:
            current = small_control_map(op, support, T0, mode_cut=min(op.n, 2 * cut), dt=dt)
            attempt = _link_once(ends, current, tol_reach)
        except (SynthesisError, ValueError) as err:
            _LOGGER.debug("Mode cut %d for the link failed: %s", min(op.n, 2 * cut), err)
            break
        if attempt.details["full_relative"] >= best.details["full_relative"]:
            break
        best = attempt
    if tol_full is not None and best.details["full_relative"] > tol_full:
        _LOGGER.warning(
            "Link full-space error %.3g above %.0e at mode cut %d",
            best.details["full_relative"], tol_full, best.details["mode_cut"],
        )
    return best
