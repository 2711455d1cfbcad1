"""Control synthesis on the span of the first M modes.

Controls are combinations of spatial channels times temporal basis functions.
The input map sends the coefficients to the weighted modal state they produce
at time T from rest; weighting makes the Euclidean norm equal to the state
norm restricted to the retained modes.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import StrEnum
from functools import cached_property

import numpy as np
import numpy.typing as npt
from scipy.linalg import cholesky, qr, solve_triangular, svd

from .const import (
    DEFAULT_SMOOTHNESS,
    GAIN_CHUNK,
    MODE_CUT_DIVISOR,
    NODE_SNAP,
    SVD_CUTOFF,
    TOL_FEAS_ABS,
    TOL_FEAS_REL,
    TOL_REACH,
)
from .cutoffs import polynomial_bump, rho
from .exceptions import LatticeError, UnreachableError
from .nnls import NnlsStatus, bounded_least_squares, kkt_violation
from .operator import DirichletOperator, FloatArray, StateSpace, state_norm
from .propagator import (
    Boundary,
    ControlSignal,
    Interior,
    State,
    Support,
    input_gain,
    march_modes,
    modal_kernels,
    propagate,
)

_LOGGER = logging.getLogger(__name__)

LowerBound = float | Callable[[FloatArray, FloatArray], FloatArray]


@dataclass(frozen=True)
class Raw:
    """Hat functions in time."""


@dataclass(frozen=True)
class Smooth:
    """Hat functions times a polynomial bump vanishing with `s` derivatives at both ends."""

    s: int = DEFAULT_SMOOTHNESS


TemporalBasis = Raw | Smooth


class SpatialBasis(StrEnum):
    """Spatial channels for interior control."""

    # eigenfunctions phi_1..phi_M, orthonormal
    MODES = "modes"
    # coarse hats, nonnegative coefficients give nonnegative controls
    HATS = "hats"


def default_mode_cut(n: int) -> int:
    """n / MODE_CUT_DIVISOR rounded up to an even number, at least 2."""
    m = max(2, n // MODE_CUT_DIVISOR)
    return min(n, m + (m % 2))


def control_time(support: Support, x: FloatArray | None = None) -> float:
    """Travel time after which every ray has met the control region."""
    if isinstance(support, Boundary):
        return 1.0 if support.left and support.right else 2.0
    if x is None:
        raise ValueError("interior control time needs grid coordinates")
    active = x[support.chi > 0.0]
    if active.size == 0:
        return math.inf
    return 2.0 * max(float(active[0]), 1.0 - float(active[-1]))


def default_space(support: Support) -> StateSpace:
    """Energy space for interior control, weak space for boundary control."""
    return StateSpace.WEAK if isinstance(support, Boundary) else StateSpace.ENERGY


@dataclass(frozen=True, eq=False, kw_only=True)
class ControlProblem:
    """Horizon, lattice, support and bases of a control synthesis."""

    op: DirichletOperator
    T: float
    support: Support
    dt: float | None = None
    mode_cut: int | None = None
    temporal_basis: TemporalBasis = field(default_factory=Raw)
    spatial_basis: SpatialBasis = SpatialBasis.MODES
    space: StateSpace | None = None

    def __post_init__(self) -> None:
        """Fill defaults and validate."""
        dt = self.op.grid.h if self.dt is None else self.dt
        object.__setattr__(self, "dt", dt)
        if self.mode_cut is None:
            object.__setattr__(self, "mode_cut", default_mode_cut(self.op.n))
        if self.space is None:
            object.__setattr__(self, "space", default_space(self.support))
        if not 1 <= self.M <= self.op.n:
            raise ValueError(f"mode cut {self.M} outside 1..{self.op.n}")
        if self.T <= 0.0 or dt <= 0.0:
            raise LatticeError(f"need T > 0 and dt > 0, got T={self.T}, dt={dt}")
        steps = round(self.T / dt)
        if steps < 1:
            raise LatticeError(f"horizon {self.T} shorter than one step {dt}")
        if abs(steps * dt - self.T) > 1e-9 * max(1.0, self.T):
            _LOGGER.warning("Horizon %.6g snapped to the step lattice (%d steps)", self.T, steps)
        if isinstance(self.temporal_basis, Smooth) and self._node_grid().size < 3:
            raise LatticeError(f"horizon {self.T} too short for a smooth temporal basis")
        if self.below_control_time:
            _LOGGER.warning(
                "Horizon %.6g is below the control time %.6g", self.T, self.control_time
            )

    @property
    def M(self) -> int:
        """Retained modes."""
        assert self.mode_cut is not None
        return self.mode_cut

    @property
    def step(self) -> float:
        """Time step."""
        assert self.dt is not None
        return self.dt

    @property
    def state_space(self) -> StateSpace:
        """Norm used on the retained modes."""
        assert self.space is not None
        return self.space

    @property
    def steps(self) -> int:
        """Steps on the lattice."""
        return round(self.T / self.step)

    @property
    def horizon(self) -> float:
        """Lattice-aligned horizon."""
        return self.steps * self.step

    @property
    def control_time(self) -> float:
        """Geometric control time of the support."""
        return control_time(self.support, self.op.grid.x)

    @property
    def below_control_time(self) -> bool:
        """True if the horizon is shorter than the control time."""
        return self.T < self.control_time - 1e-12

    def with_horizon(self, T: float) -> ControlProblem:  # noqa: N803
        """Same problem on another horizon."""
        return ControlProblem(
            op=self.op,
            T=T,
            support=self.support,
            dt=self.dt,
            mode_cut=self.mode_cut,
            temporal_basis=self.temporal_basis,
            spatial_basis=self.spatial_basis,
            space=self.space,
        )

    def _node_grid(self) -> FloatArray:
        # spacing T/(K-1), K = floor(T (M-1)) + 1: the bandwidth of the retained modes
        count = max(2, math.floor(self.horizon * (self.M - 1) + NODE_SNAP) + 1)
        return np.linspace(0.0, self.horizon, count)

    def node_times(self) -> FloatArray:
        """Centres of the temporal hats; Smooth bases drop the end nodes."""
        nodes = self._node_grid()
        if isinstance(self.temporal_basis, Smooth):
            return nodes[1:-1]
        return nodes

    def temporal_samples(self) -> FloatArray:
        """Basis functions sampled on the lattice, shape (steps + 1, K)."""
        times = np.arange(self.steps + 1) * self.step
        grid = self._node_grid()
        width = grid[1] - grid[0]
        centres = self.node_times()
        theta = np.clip(1.0 - np.abs(times[:, None] - centres[None, :]) / width, 0.0, None)
        if isinstance(self.temporal_basis, Smooth):
            theta *= polynomial_bump(times, 0.0, self.horizon, self.temporal_basis.s)[:, None]
        return theta

    def spatial_profiles(self) -> FloatArray:
        """Channel profiles on the control outputs, shape (width, L)."""
        if isinstance(self.support, Boundary):
            return np.eye(self.support.width)
        if self.spatial_basis is SpatialBasis.MODES:
            return self.op.eigenvectors[:, : self.M].copy()
        centres = np.arange(1, self.M + 1) / (self.M + 1)
        spacing = 1.0 / (self.M + 1)
        x = self.op.grid.x
        return np.clip(1.0 - np.abs(x[:, None] - centres[None, :]) / spacing, 0.0, None)

    def channel_locations(self) -> FloatArray:
        """Where each spatial channel sits (boundary ends at 0 and 1)."""
        if isinstance(self.support, Boundary):
            ends = [0.0] if self.support.left else []
            return np.array(ends + ([1.0] if self.support.right else []))
        if self.spatial_basis is SpatialBasis.MODES:
            return np.full(self.M, np.nan)
        return np.arange(1, self.M + 1) / (self.M + 1)

    def spatial_gram(self, profiles: FloatArray) -> FloatArray:
        """L^2 Gram matrix of the spatial channels."""
        if isinstance(self.support, Boundary):
            return np.eye(profiles.shape[1])
        return self.op.grid.h * profiles.T @ profiles

    def weights(self) -> tuple[FloatArray, FloatArray]:
        """Norm weights of the retained modes."""
        wy, wv = self.op.weights(self.state_space)
        return wy[: self.M], wv[: self.M]

    def weighted_modes(self, state: State) -> FloatArray:
        """Weighted modal vector (position block, velocity block) of a state."""
        wy, wv = self.weights()
        a = self.op.to_modal(state.y)[: self.M]
        b = self.op.to_modal(state.v)[: self.M]
        return np.concatenate([wy * a, wv * b])

    def mode_amplitudes(self, state: State) -> FloatArray:
        """Weighted norm of each retained (position, velocity) pair.

        Free flow of a coercive operator rotates every pair, so these are
        constant along uncontrolled motion.
        """
        w = self.weighted_modes(state)
        return np.hypot(w[: self.M], w[self.M :])

    def free_final(self, state: State) -> FloatArray:
        """Weighted retained modes of the uncontrolled evolution over the horizon."""
        lam = self.op.eigenvalues[: self.M]
        c, s, _, _ = modal_kernels(lam, self.horizon)
        a0 = self.op.to_modal(state.y)[: self.M]
        b0 = self.op.to_modal(state.v)[: self.M]
        wy, wv = self.weights()
        return np.concatenate([wy * (a0 * c + b0 * s), wv * (b0 * c - lam * s * a0)])


@dataclass(frozen=True, eq=False, kw_only=True)
class InputMap:
    """Coefficients to weighted retained modes at the horizon.

    `matrix` has shape (2M, L*K) with coefficient index l*K + j (channel l,
    temporal basis function j). `singular_values` belong to the map written in
    coefficients that are orthonormal for the discrete L^2 norm of the control.
    """

    problem: ControlProblem
    matrix: FloatArray = field(repr=False)
    singular_values: FloatArray
    rank: int
    theta: FloatArray = field(repr=False)
    profiles: FloatArray = field(repr=False)
    pinv: FloatArray = field(repr=False)

    @property
    def channels(self) -> int:
        """Spatial channels L."""
        return int(self.profiles.shape[1])

    @property
    def nodes(self) -> int:
        """Temporal basis functions K."""
        return int(self.theta.shape[1])

    @property
    def condition(self) -> float:
        """Ratio of extreme singular values (inf if rank deficient)."""
        smallest = float(self.singular_values[-1])
        return math.inf if smallest == 0.0 else float(self.singular_values[0]) / smallest

    def signal(self, coefficients: FloatArray) -> ControlSignal:
        """Sampled control for a coefficient vector."""
        coeff = coefficients.reshape(self.channels, self.nodes)
        samples = (self.theta @ coeff.T) @ self.profiles.T
        return ControlSignal(dt=self.problem.step, samples=samples, support=self.problem.support)

    def defect(self, y_from: State, y_to: State) -> FloatArray:
        """Weighted retained modes of target minus free evolution."""
        return self.problem.weighted_modes(y_to) - self.problem.free_final(y_from)

    @cached_property
    def gain(self) -> float:
        """Bound on ||control||_inf per unit defect for the minimal-norm control."""
        return control_gain(self)


def _responses(p: ControlProblem, theta: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Final modal position and velocity of each retained mode under unit forcing theta_j."""
    lam = p.op.eigenvalues[: p.M]
    zeros = np.zeros((p.M, theta.shape[1]))
    a, b, _ = march_modes(lam, zeros, zeros, theta[:, np.newaxis, :], p.step, p.steps, stride=None)
    return a[0], b[0]


def _whiten(
    phi: FloatArray, p: ControlProblem, theta: FloatArray, profiles: FloatArray
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Write phi in L^2-orthonormal coefficients; return it with both inverse factors."""
    r_t = qr(math.sqrt(p.step) * theta, mode="r")[0]
    r_t = r_t[: theta.shape[1]]
    r_x = cholesky(p.spatial_gram(profiles), lower=False)
    inv_t = solve_triangular(r_t, np.eye(r_t.shape[0]))
    inv_x = solve_triangular(r_x, np.eye(r_x.shape[0]))
    rows = phi.shape[0]
    blocks = phi.reshape(rows, inv_x.shape[0], inv_t.shape[0])
    white = np.einsum("bij,ia,jc->bac", blocks, inv_x, inv_t, optimize=True)
    return white.reshape(rows, -1), inv_x, inv_t


def assemble_input_map(p: ControlProblem) -> InputMap:
    """Build Phi column by column from exact modal responses, and its SVD."""
    theta = p.temporal_samples()
    profiles = p.spatial_profiles()
    gain = (input_gain(p.op, p.support) @ profiles)[: p.M]
    resp_a, resp_b = _responses(p, theta)
    wy, wv = p.weights()
    pos = np.einsum("kl,kj->klj", gain, resp_a) * wy[:, None, None]
    vel = np.einsum("kl,kj->klj", gain, resp_b) * wv[:, None, None]
    matrix = np.vstack([pos.reshape(p.M, -1), vel.reshape(p.M, -1)])

    white, inv_x, inv_t = _whiten(matrix, p, theta, profiles)
    u, s, vt = svd(white, full_matrices=False)
    rank = int(np.sum(s > SVD_CUTOFF * s[0])) if s.size and s[0] > 0.0 else 0
    core = vt[:rank].T @ (u[:, :rank].T / s[:rank, None])
    channels, nodes = inv_x.shape[0], inv_t.shape[0]
    core = core.reshape(channels, nodes, -1)
    pinv = np.einsum("ia,jc,acb->ijb", inv_x, inv_t, core, optimize=True)
    pinv = pinv.reshape(channels * nodes, -1)

    _LOGGER.debug(
        "Input map %dx%d at T=%.4g: rank %d, sigma_max %.3g, sigma_min %.3g",
        matrix.shape[0], matrix.shape[1], p.horizon, rank, s[0], s[-1],
    )
    return InputMap(
        problem=p,
        matrix=matrix,
        singular_values=s,
        rank=rank,
        theta=theta,
        profiles=profiles,
        pinv=pinv,
    )


@dataclass(frozen=True, eq=False, kw_only=True)
class ControlSolution:
    """Synthesized control with its residual on the retained modes."""

    control: ControlSignal
    coefficients: FloatArray = field(repr=False)
    residual: float
    relative_residual: float
    reachable: bool

    def require_reachable(self) -> ControlSolution:
        """Raise if the target was not reached."""
        if not self.reachable:
            raise UnreachableError(
                f"relative residual {self.relative_residual:.3g} exceeds {TOL_REACH:g}",
                self.residual,
            )
        return self


def _as_map(p: ControlProblem | InputMap) -> InputMap:
    return p if isinstance(p, InputMap) else assemble_input_map(p)


def min_norm_control(
    p: ControlProblem | InputMap,
    y_from: State,
    y_to: State,
    *,
    tol_reach: float = TOL_REACH,
) -> ControlSolution:
    """Control of least discrete L^2 norm steering y_from to y_to on the retained modes."""
    imap = _as_map(p)
    target = imap.defect(y_from, y_to)
    coefficients = imap.pinv @ target
    residual = float(np.linalg.norm(imap.matrix @ coefficients - target))
    scale = float(np.linalg.norm(target))
    relative = residual / scale if scale > 0.0 else residual
    reachable = relative <= tol_reach
    if not reachable:
        _LOGGER.debug("Target unreachable at T=%.4g: relative residual %.3g",
                      imap.problem.horizon, relative)
    return ControlSolution(
        control=imap.signal(coefficients),
        coefficients=coefficients,
        residual=residual,
        relative_residual=relative,
        reachable=reachable,
    )


def blend_signal(
    profile: FloatArray, start: FloatArray, end: FloatArray, support: Support, dt: float
) -> ControlSignal:
    """Samples profile(t) * start + (1 - profile(t)) * end."""
    samples = profile[:, None] * start[None, :] + (1.0 - profile[:, None]) * end[None, :]
    return ControlSignal(dt=dt, samples=samples, support=support)


def smooth_null_control(
    p: ControlProblem | InputMap,
    y0: State,
    steady_control: npt.ArrayLike | None = None,
    *,
    tol_reach: float = TOL_REACH,
) -> ControlSolution:
    """Steer y0 to rest on the retained modes with a control vanishing at its ends.

    With a generating steady control v0 the first unit of time applies
    rho(t) v0; the smooth-basis minimal-norm control then cancels the state
    reached at t = 1 over the horizon of `p`. Without one only the second
    phase runs.
    """
    imap = _as_map(p)
    prob = imap.problem
    if not isinstance(prob.temporal_basis, Smooth):
        raise ValueError("smooth null control needs a Smooth temporal basis")
    zero = State.zeros(prob.op.n)
    if steady_control is None:
        return min_norm_control(imap, y0, zero, tol_reach=tol_reach)

    steps1 = round(1.0 / prob.step)
    times = np.arange(steps1 + 1) * prob.step
    v0 = np.broadcast_to(np.asarray(steady_control, dtype=np.float64), (prob.support.width,))
    phase1 = blend_signal(rho(times), v0, np.zeros_like(v0), prob.support, prob.step)
    start = propagate(prob.op, y0, phase1, stride=steps1).final
    sol = min_norm_control(imap, start, zero, tol_reach=tol_reach)
    return ControlSolution(
        control=phase1.then(sol.control),
        coefficients=sol.coefficients,
        residual=sol.residual,
        relative_residual=sol.relative_residual,
        reachable=sol.reachable,
    )


def control_gain(imap: InputMap) -> float:
    """Largest row norm of the defect-to-samples map of the minimal-norm control.

    Gives ||control||_inf <= gain * ||defect|| for every defect.
    """
    coeff = imap.pinv.reshape(imap.channels, imap.nodes, -1)
    worst = 0.0
    for start in range(0, imap.theta.shape[0], GAIN_CHUNK):
        theta = imap.theta[start : start + GAIN_CHUNK]
        per_channel = np.einsum("tj,ljb->tlb", theta, coeff, optimize=True)
        rows = np.einsum("xl,tlb->txb", imap.profiles, per_channel, optimize=True)
        worst = max(worst, float(np.sqrt(np.max(np.sum(rows * rows, axis=-1)))))
    return worst


def orbit_gain(imap: InputMap, amplitudes: FloatArray) -> float:
    """Sup-norm bound of the minimal-norm control over defects with bounded mode pairs.

    Covers every defect whose retained pairs have weighted norms at most
    `amplitudes`, hence the whole free orbit of such a defect. Never exceeds
    control_gain(imap) * ||amplitudes||.
    """
    m = imap.problem.M
    weights = np.asarray(amplitudes, dtype=np.float64)
    coeff = imap.pinv.reshape(imap.channels, imap.nodes, -1)
    worst = 0.0
    for start in range(0, imap.theta.shape[0], GAIN_CHUNK):
        theta = imap.theta[start : start + GAIN_CHUNK]
        per_channel = np.einsum("tj,ljb->tlb", theta, coeff, optimize=True)
        rows = np.einsum("xl,tlb->txb", imap.profiles, per_channel, optimize=True)
        pairs = np.hypot(rows[..., :m], rows[..., m:])
        worst = max(worst, float(np.max(pairs @ weights)))
    return worst


def estimate_smooth_constant(
    p: ControlProblem | InputMap, rng: np.random.Generator, samples: int = 8
) -> float:
    """Largest ||control||_inf / ||y0|| over random y0 in the span of the retained modes."""
    imap = _as_map(p)
    prob = imap.problem
    worst = 0.0
    for _ in range(samples):
        a = np.zeros(prob.op.n)
        b = np.zeros(prob.op.n)
        a[: prob.M] = rng.standard_normal(prob.M)
        b[: prob.M] = rng.standard_normal(prob.M)
        y0 = State(prob.op.from_modal(a), prob.op.from_modal(b))
        norm = state_norm(prob.op, y0, prob.state_space)
        sol = smooth_null_control(imap, y0)
        worst = max(worst, sol.control.sup_norm() / norm)
    _LOGGER.debug("Sampled smooth-control constant %.4g over %d states", worst, samples)
    return worst


class Feasibility(StrEnum):
    """Verdict of a constrained reachability test."""

    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True, eq=False, kw_only=True)
class FeasibilityResult:
    """NNLS verdict, witness coefficients and residual."""

    status: Feasibility
    coefficients: FloatArray = field(repr=False)
    residual: float
    threshold: float
    kkt: float
    iterations: int
    control: ControlSignal | None = None

    @property
    def feasible(self) -> bool:
        """True for a feasible verdict."""
        return self.status is Feasibility.FEASIBLE


def classify(
    matrix: FloatArray,
    target: FloatArray,
    lower: npt.ArrayLike = 0.0,
    *,
    tol_feas: float = TOL_FEAS_REL,
    max_iter: int | None = None,
) -> FeasibilityResult:
    """Decide whether matrix @ x = target has a solution with x >= lower.

    Feasible when the bounded least-squares residual is at most
    tol_feas * ||target|| + TOL_FEAS_ABS.
    """
    result = bounded_least_squares(matrix, target, lower, max_iter=max_iter)
    threshold = tol_feas * float(np.linalg.norm(target)) + TOL_FEAS_ABS
    if result.status is NnlsStatus.ITERATION_CAP:
        status = Feasibility.INCONCLUSIVE
    elif result.residual <= threshold:
        status = Feasibility.FEASIBLE
    else:
        status = Feasibility.INFEASIBLE
    return FeasibilityResult(
        status=status,
        coefficients=result.x,
        residual=result.residual,
        threshold=threshold,
        kkt=kkt_violation(matrix, target, result.x, lower),
        iterations=result.iterations,
    )


def coefficient_bounds(imap: InputMap, lower_bound: LowerBound) -> FloatArray:
    """Lower bound evaluated at every (channel, node) pair."""
    prob = imap.problem
    if callable(lower_bound):
        nodes = prob.node_times()
        where = prob.channel_locations()
        tt, xx = np.meshgrid(nodes, where)
        return np.asarray(lower_bound(tt, xx), dtype=np.float64).ravel()
    return np.full(imap.channels * imap.nodes, float(lower_bound))


def nnls_feasibility(
    p: ControlProblem | InputMap,
    y_from: State,
    y_to: State,
    lower_bound: LowerBound = 0.0,
    *,
    tol_feas: float = TOL_FEAS_REL,
) -> FeasibilityResult:
    """Reach y_to with hat coefficients above the bound, by NNLS.

    Hat coefficients above the bound give control samples above it, so a
    feasible verdict comes with an admissible witness control.
    """
    imap = _as_map(p)
    prob = imap.problem
    if not isinstance(prob.temporal_basis, Raw):
        raise ValueError("NNLS feasibility needs the Raw temporal basis")
    if isinstance(prob.support, Interior) and prob.spatial_basis is not SpatialBasis.HATS:
        raise ValueError("NNLS feasibility for interior control needs spatial hats")
    lower = coefficient_bounds(imap, lower_bound)
    result = classify(imap.matrix, imap.defect(y_from, y_to), lower, tol_feas=tol_feas)
    _LOGGER.debug(
        "NNLS feasibility at T=%.4g: %s (residual %.3g, threshold %.3g)",
        prob.horizon, result.status, result.residual, result.threshold,
    )
    return FeasibilityResult(
        status=result.status,
        coefficients=result.coefficients,
        residual=result.residual,
        threshold=result.threshold,
        kkt=result.kkt,
        iterations=result.iterations,
        control=imap.signal(result.coefficients),
    )
