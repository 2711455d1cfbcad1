"""Tests for control synthesis on the retained modes."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.linalg import null_space

from wave_positivity.controllability import (
    ControlProblem,
    Feasibility,
    Raw,
    Smooth,
    SpatialBasis,
    assemble_input_map,
    classify,
    coefficient_bounds,
    control_gain,
    control_time,
    default_mode_cut,
    default_space,
    estimate_smooth_constant,
    min_norm_control,
    nnls_feasibility,
    orbit_gain,
    smooth_null_control,
)
from wave_positivity.exceptions import LatticeError, UnreachableError
from wave_positivity.operator import DirichletOperator, StateSpace
from wave_positivity.propagator import Boundary, Interior, State, free_evolve, propagate

from .conftest import boundary_pair, interior_pair, mode_state


@pytest.fixture
def boundary_problem(op_medium: DirichletOperator) -> ControlProblem:
    """Two-ended boundary control on T = 2."""
    return ControlProblem(op=op_medium, T=2.0, support=Boundary(True, True))


class TestDefaults:
    """Test default mode cut, control time and state space."""

    @pytest.mark.parametrize(("n", "expected"), [(9, 2), (63, 8), (255, 32), (511, 64)])
    def test_mode_cut(self, n: int, expected: int) -> None:
        """Test the retained mode count."""
        assert default_mode_cut(n) == expected

    def test_control_times(self, op_medium: DirichletOperator) -> None:
        """Test travel times of the supports."""
        x = op_medium.grid.x
        assert control_time(Boundary(True, True)) == 1.0
        assert control_time(Boundary(False, True)) == 2.0
        full = Interior(np.ones(op_medium.n))
        assert control_time(full, x) == pytest.approx(2.0 * op_medium.grid.h)
        half = Interior((x <= 0.5).astype(float))
        assert control_time(half, x) == pytest.approx(1.0, abs=2 * op_medium.grid.h)

    def test_spaces(self, op_medium: DirichletOperator) -> None:
        """Test boundary control uses the weak space."""
        assert default_space(Boundary()) is StateSpace.WEAK
        assert default_space(Interior(np.ones(op_medium.n))) is StateSpace.ENERGY

    def test_smooth_too_short(self, op_medium: DirichletOperator) -> None:
        """Test a smooth basis needs at least three nodes."""
        with pytest.raises(LatticeError, match="too short"):
            ControlProblem(
                op=op_medium, T=0.1, support=Boundary(), temporal_basis=Smooth(1)
            )


class TestInputMap:
    """Test the input map and its decomposition."""

    def test_full_rank_at_two(self, boundary_problem: ControlProblem) -> None:
        """Test T = 2 with both ends controls every retained mode."""
        imap = assemble_input_map(boundary_problem)
        assert imap.matrix.shape == (16, 2 * 15)
        assert imap.rank == 16
        assert imap.singular_values[-1] > 0.0
        assert np.isfinite(imap.condition)

    def test_one_step_is_small(self, op_medium: DirichletOperator) -> None:
        """Test a single step produces almost nothing."""
        dt = op_medium.grid.h
        tiny = assemble_input_map(ControlProblem(op=op_medium, T=dt, support=Boundary()))
        full = assemble_input_map(ControlProblem(op=op_medium, T=2.0, support=Boundary()))
        tiny_cols = np.linalg.norm(tiny.matrix, axis=0).max()
        full_cols = np.linalg.norm(full.matrix, axis=0).max()
        assert tiny_cols < 0.05 * full_cols

    def test_longer_horizon_not_worse(self, op_medium: DirichletOperator) -> None:
        """Test doubling the horizon does not lose controllability."""
        short = assemble_input_map(ControlProblem(op=op_medium, T=2.0, support=Boundary()))
        long = assemble_input_map(ControlProblem(op=op_medium, T=4.0, support=Boundary()))
        assert long.singular_values[-1] >= 0.9 * short.singular_values[-1]

    def test_matches_propagation(self, boundary_problem: ControlProblem) -> None:
        """Test a column of the map equals the propagated response."""
        imap = assemble_input_map(boundary_problem)
        coefficients = np.zeros(imap.matrix.shape[1])
        coefficients[7] = 1.0
        op = boundary_problem.op
        traj = propagate(op, State.zeros(op.n), imap.signal(coefficients), stride=10_000)
        np.testing.assert_allclose(
            boundary_problem.weighted_modes(traj.final), imap.matrix[:, 7], atol=1e-9
        )

    def test_gain_bounds_controls(self, boundary_problem: ControlProblem) -> None:
        """Test the gain bounds the sup norm of minimal-norm controls."""
        imap = assemble_input_map(boundary_problem)
        gain = control_gain(imap)
        rng = np.random.default_rng(1)
        for _ in range(5):
            defect = rng.standard_normal(imap.matrix.shape[0])
            samples = imap.signal(imap.pinv @ defect).samples
            assert np.abs(samples).max() <= gain * np.linalg.norm(defect) * (1 + 1e-9)
        assert imap.gain == pytest.approx(gain)

    def test_orbit_gain_bounds_free_orbit(self, boundary_problem: ControlProblem) -> None:
        """Test the orbit gain bounds controls along the free orbit of a state."""
        imap = assemble_input_map(boundary_problem)
        op = boundary_problem.op
        state = mode_state(op, 1) * 0.3 + mode_state(op, 2, velocity=True) * 0.1
        amplitudes = boundary_problem.mode_amplitudes(state)
        bound = orbit_gain(imap, amplitudes)
        assert bound <= control_gain(imap) * np.linalg.norm(amplitudes) * (1 + 1e-9)
        for tau in (0.0, 0.4, 1.3, 2.9):
            moved = free_evolve(op, state, tau)
            defect = boundary_problem.weighted_modes(moved)
            samples = imap.signal(imap.pinv @ defect).samples
            assert np.abs(samples).max() <= bound * (1 + 1e-9)

    def test_amplitudes_kept_by_free_flow(self, boundary_problem: ControlProblem) -> None:
        """Test free evolution keeps the weighted amplitude of every mode pair."""
        op = boundary_problem.op
        state = mode_state(op, 1) * 0.5 + mode_state(op, 4) + mode_state(op, 3, velocity=True)
        before = boundary_problem.mode_amplitudes(state)
        after = boundary_problem.mode_amplitudes(free_evolve(op, state, 0.77))
        np.testing.assert_allclose(after, before, rtol=1e-10, atol=1e-14)


class TestMinNormControl:
    """Test minimal-norm control."""

    def test_zero_to_zero(self, boundary_problem: ControlProblem) -> None:
        """Test rest to rest needs no control."""
        zero = State.zeros(boundary_problem.op.n)
        sol = min_norm_control(boundary_problem, zero, zero)
        np.testing.assert_allclose(sol.control.samples, 0.0)
        assert sol.reachable

    def test_first_mode_to_rest(self, boundary_problem: ControlProblem) -> None:
        """Test the first mode is driven to rest on the retained modes."""
        op = boundary_problem.op
        y0 = mode_state(op, 1)
        sol = min_norm_control(boundary_problem, y0, State.zeros(op.n)).require_reachable()
        assert sol.relative_residual <= 1e-8
        traj = propagate(op, y0, sol.control, stride=10_000)
        final = boundary_problem.weighted_modes(traj.final)
        assert np.linalg.norm(final) <= 1e-6 * np.linalg.norm(boundary_problem.weighted_modes(y0))

    def test_short_horizon_unreachable(self, op_medium: DirichletOperator) -> None:
        """Test half a unit of time is too short for both ends."""
        p = ControlProblem(op=op_medium, T=0.5, support=Boundary())
        sol = min_norm_control(p, mode_state(op_medium, 1), State.zeros(op_medium.n))
        assert not sol.reachable
        with pytest.raises(UnreachableError):
            sol.require_reachable()

    def test_null_space_perturbation_grows_norm(
        self, boundary_problem: ControlProblem
    ) -> None:
        """Test adding null-space coefficients keeps the target and raises the L2 norm."""
        imap = assemble_input_map(boundary_problem)
        defect = imap.defect(mode_state(boundary_problem.op, 1), State.zeros(imap.problem.op.n))
        best = imap.pinv @ defect
        kernel = null_space(imap.matrix)
        assert kernel.shape[1] > 0
        base = np.sum(imap.signal(best).samples ** 2)
        rng = np.random.default_rng(3)
        for _ in range(5):
            other = best + 0.1 * kernel @ rng.standard_normal(kernel.shape[1])
            np.testing.assert_allclose(imap.matrix @ other, imap.matrix @ best, atol=1e-10)
            assert np.sum(imap.signal(other).samples ** 2) > base


class TestSmoothNullControl:
    """Test smooth null controls."""

    @pytest.fixture
    def smooth_problem(self, op_medium: DirichletOperator) -> ControlProblem:
        """Interior control everywhere with a smooth temporal basis."""
        return ControlProblem(
            op=op_medium,
            T=2.5,
            support=Interior(np.ones(op_medium.n)),
            temporal_basis=Smooth(1),
        )

    def test_requires_smooth_basis(self, boundary_problem: ControlProblem) -> None:
        """Test a Raw basis is refused."""
        zero = State.zeros(boundary_problem.op.n)
        with pytest.raises(ValueError, match="Smooth"):
            smooth_null_control(boundary_problem, zero)

    def test_zero_state(self, smooth_problem: ControlProblem) -> None:
        """Test the null state needs no control."""
        sol = smooth_null_control(smooth_problem, State.zeros(smooth_problem.op.n))
        np.testing.assert_allclose(sol.control.samples, 0.0)

    def test_steady_state_to_rest(self, smooth_problem: ControlProblem) -> None:
        """Test the unit-load steady state is driven to rest with vanishing end values."""
        op = smooth_problem.op
        y0 = interior_pair(op, 1.0).state
        sol = smooth_null_control(smooth_problem, y0)
        np.testing.assert_allclose(sol.control.samples[[0, -1]], 0.0, atol=1e-12)
        traj = propagate(op, y0, sol.control, stride=10_000)
        final = smooth_problem.weighted_modes(traj.final)
        initial = smooth_problem.weighted_modes(y0)
        assert np.dot(final, final) <= 1e-8 * np.dot(initial, initial)

    def test_with_steady_control(self, smooth_problem: ControlProblem) -> None:
        """Test the rho phase starts at the steady control and the horizon grows by one."""
        op = smooth_problem.op
        y0 = interior_pair(op, 1.0).state
        sol = smooth_null_control(smooth_problem, y0, steady_control=np.ones(op.n))
        np.testing.assert_allclose(sol.control.samples[0], 1.0)
        np.testing.assert_allclose(sol.control.samples[-1], 0.0, atol=1e-12)
        assert sol.control.T == pytest.approx(3.5)
        traj = propagate(op, y0, sol.control, stride=10_000)
        final = smooth_problem.weighted_modes(traj.final)
        initial = smooth_problem.weighted_modes(y0)
        assert np.dot(final, final) <= 1e-8 * np.dot(initial, initial)

    def test_smooth_constant(self, smooth_problem: ControlProblem) -> None:
        """Test the sampled constant is positive and finite."""
        value = estimate_smooth_constant(smooth_problem, np.random.default_rng(0), samples=3)
        assert 0.0 < value < np.inf


class TestNnlsFeasibility:
    """Test nonnegative reachability."""

    def test_free_evolution_target(self, boundary_problem: ControlProblem) -> None:
        """Test the free evolution is reached with a zero witness."""
        op = boundary_problem.op
        y0 = boundary_pair(op, 1.0).state + mode_state(op, 2) * 0.1
        y1 = free_evolve(op, y0, boundary_problem.horizon)
        result = nnls_feasibility(boundary_problem, y0, y1, 0.0)
        assert result.status is Feasibility.FEASIBLE
        np.testing.assert_allclose(result.coefficients, 0.0, atol=1e-10)

    def test_constants_too_fast(self, op_127: DirichletOperator) -> None:
        """Test 1 to 2 in less than one unit of time is infeasible."""
        p = ControlProblem(op=op_127, T=0.9, support=Boundary())
        result = nnls_feasibility(p, boundary_pair(op_127, 1.0).state,
                                  boundary_pair(op_127, 2.0).state)
        assert result.status is Feasibility.INFEASIBLE
        assert result.residual > result.threshold

    def test_constants_in_time_two(self, op_127: DirichletOperator) -> None:
        """Test 1 to 2 in two units of time has a nonnegative witness."""
        p = ControlProblem(op=op_127, T=2.0, support=Boundary())
        result = nnls_feasibility(p, boundary_pair(op_127, 1.0).state,
                                  boundary_pair(op_127, 2.0).state)
        assert result.feasible
        assert result.control is not None
        assert result.control.min() >= 0.0

    def test_rejects_smooth_basis(self, op_medium: DirichletOperator) -> None:
        """Test NNLS needs the Raw basis."""
        p = ControlProblem(op=op_medium, T=2.0, support=Boundary(), temporal_basis=Smooth(1))
        zero = State.zeros(op_medium.n)
        with pytest.raises(ValueError, match="Raw"):
            nnls_feasibility(p, zero, zero)

    def test_rejects_interior_modes(self, op_medium: DirichletOperator) -> None:
        """Test interior NNLS needs spatial hats."""
        p = ControlProblem(
            op=op_medium,
            T=2.0,
            support=Interior(np.ones(op_medium.n)),
            temporal_basis=Raw(),
            spatial_basis=SpatialBasis.MODES,
        )
        zero = State.zeros(op_medium.n)
        with pytest.raises(ValueError, match="hats"):
            nnls_feasibility(p, zero, zero)

    def test_callable_bounds(self, boundary_problem: ControlProblem) -> None:
        """Test a callable lower bound is evaluated per channel and node."""
        imap = assemble_input_map(boundary_problem)
        bounds = coefficient_bounds(imap, lambda t, x: t + 10.0 * x)
        nodes = boundary_problem.node_times()
        np.testing.assert_allclose(bounds[: nodes.size], nodes)
        np.testing.assert_allclose(bounds[nodes.size :], nodes + 10.0)

    def test_kkt_on_input_map(self, op_127: DirichletOperator) -> None:
        """Test the NNLS point satisfies the KKT conditions on a real input map."""
        p = ControlProblem(op=op_127, T=0.9, support=Boundary())
        result = nnls_feasibility(p, boundary_pair(op_127, 1.0).state,
                                  boundary_pair(op_127, 2.0).state)
        assert result.status is Feasibility.INFEASIBLE
        assert result.kkt <= 1e-8

    def test_feasibility_tolerance(self) -> None:
        """Test the relative tolerance decides a borderline verdict."""
        matrix = np.array([[1.0, 1.0]])
        target = np.array([-1.0])
        strict = classify(matrix, target)
        assert strict.status is Feasibility.INFEASIBLE
        assert strict.residual == pytest.approx(1.0)
        loose = classify(matrix, target, tol_feas=2.0)
        assert loose.status is Feasibility.FEASIBLE
        assert loose.threshold > 2.0
