"""Tests for minimal-time estimation."""

from __future__ import annotations

from dataclasses import replace
from fractions import Fraction
from unittest.mock import patch

import numpy as np
import pytest

from wave_positivity.const import TOL_FEAS_ABS, TOL_FEAS_REL, TOL_STATE
from wave_positivity.controllability import Feasibility, assemble_input_map
from wave_positivity.exceptions import BracketError, LatticeError
from wave_positivity.mintime import (
    STATE_REFINEMENTS,
    MinTimeEstimate,
    MinTimeQuery,
    Probe,
    Prober,
    Regime,
    _state_program,
    _state_stations,
    bisect,
    estimate_regimes,
    feasible_at,
    prop51_controls,
    prop51_min_time_controls,
    verify_prop51,
)
from wave_positivity.operator import DirichletOperator
from wave_positivity.propagator import Boundary

from .conftest import boundary_pair


def _query(
    op: DirichletOperator,
    regime: Regime,
    y00: float = 1.0,
    y10: float = 2.0,
    bracket: tuple[float, float] = (0.25, 2.0),
) -> MinTimeQuery:
    """Query between two constant boundary steady states."""
    return MinTimeQuery(
        op=op,
        y_from=boundary_pair(op, y00).state,
        y_to=boundary_pair(op, y10).state,
        support=Boundary(),
        regime=regime,
        bracket=bracket,
    )


def _threshold_prober(
    threshold: float, below: Feasibility = Feasibility.INFEASIBLE
) -> Prober:
    """Prober feasible from a fixed horizon on."""

    def probe(query: MinTimeQuery, T: float) -> Probe:  # noqa: N803
        status = Feasibility.FEASIBLE if T >= threshold else below
        return Probe(T=T, regime=query.regime, status=status, residual=0.0)

    return probe


class TestMinTimeQuery:
    """Test query validation."""

    def test_defaults(self, op_medium: DirichletOperator) -> None:
        """Test the lattice step and resolution default to h."""
        query = _query(op_medium, Regime.UNCONSTRAINED)
        assert query.step == op_medium.grid.h
        assert query.resolution_steps == 1

    @pytest.mark.parametrize("bracket", [(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)])
    def test_bad_bracket(self, op_medium: DirichletOperator, bracket: tuple[float, float]) -> None:
        """Test the bracket must be ordered and positive."""
        with pytest.raises(BracketError):
            _query(op_medium, Regime.UNCONSTRAINED, bracket=bracket)

    def test_resolution_finer_than_step(self, op_medium: DirichletOperator) -> None:
        """Test the resolution cannot undercut the lattice."""
        pair = boundary_pair(op_medium, 1.0)
        with pytest.raises(LatticeError):
            MinTimeQuery(
                op=op_medium,
                y_from=pair.state,
                y_to=pair.state,
                support=Boundary(),
                regime=Regime.UNCONSTRAINED,
                bracket=(0.5, 1.0),
                resolution=op_medium.grid.h / 2,
            )

    def test_with_regime(self, op_medium: DirichletOperator) -> None:
        """Test switching regimes keeps the rest of the query."""
        query = _query(op_medium, Regime.UNCONSTRAINED).with_regime(Regime.STATE_NONNEG)
        assert query.regime is Regime.STATE_NONNEG
        assert query.bracket == (0.25, 2.0)


class TestFeasibleAt:
    """Test single-horizon feasibility."""

    @pytest.mark.parametrize("regime", [Regime.UNCONSTRAINED, Regime.CONTROL_NONNEG])
    def test_steady_to_itself(self, op_medium: DirichletOperator, regime: Regime) -> None:
        """Test a steady state reaches itself."""
        probe = feasible_at(_query(op_medium, regime, 1.0, 1.0), 1.5)
        assert probe.feasible
        assert probe.row()[1] == regime.value

    def test_constants_nonneg_in_time_two(self, op_127: DirichletOperator) -> None:
        """Test 1 to 2 in time 2 with nonnegative controls."""
        probe = feasible_at(_query(op_127, Regime.CONTROL_NONNEG), 2.0)
        assert probe.feasible
        assert probe.control is not None
        assert probe.control.min() >= 0.0

    def test_constants_too_fast(self, op_medium: DirichletOperator) -> None:
        """Test 1 to 2 in half a unit of time is out of reach even without constraints."""
        probe = feasible_at(_query(op_medium, Regime.UNCONSTRAINED), 0.5)
        assert probe.status is Feasibility.INFEASIBLE

    def test_tolerances_reach_the_verdict(self, op_medium: DirichletOperator) -> None:
        """Test loose tolerances accept a horizon the defaults refuse."""
        strict = _query(op_medium, Regime.CONTROL_NONNEG)
        loose = replace(strict, tol_feas=10.0)
        assert not feasible_at(strict, 0.5).feasible
        assert feasible_at(loose, 0.5).feasible
        free = replace(strict, regime=Regime.UNCONSTRAINED, tol_reach=2.0)
        assert feasible_at(free, 0.5).feasible

    def test_state_regime_accepts_witness(self, op_medium: DirichletOperator) -> None:
        """Test a nonnegative witness state makes the state regime feasible."""
        query = _query(op_medium, Regime.STATE_NONNEG)
        with patch("wave_positivity.mintime._witness_min_state", return_value=0.5):
            probe = feasible_at(query, 2.0)
        assert probe.feasible
        assert probe.min_state == 0.5
        assert not probe.witness_based

    def test_state_regime_uncertified(self, op_small: DirichletOperator) -> None:
        """Test a state dipping between stations gives an uncertified verdict."""
        query = _query(op_small, Regime.STATE_NONNEG)
        with patch("wave_positivity.mintime._witness_min_state", return_value=-1.0) as lowest:
            probe = feasible_at(query, 2.0)
        assert lowest.call_count == 1 + len(STATE_REFINEMENTS)
        assert probe.status is Feasibility.INCONCLUSIVE
        assert probe.witness_based
        assert probe.min_state == -1.0
        assert not probe.feasible

    @pytest.mark.parametrize(
        ("y00", "y10", "T"), [(1.0, 1.0, 2.0), (1.0, 2.0, 1.5), (1.0, 2.0, 2.0)]
    )
    def test_state_regime_constants(
        self, op_small: DirichletOperator, y00: float, y10: float, T: float  # noqa: N803
    ) -> None:
        """Test constant steady states are linked with nonnegative controls and states."""
        probe = feasible_at(_query(op_small, Regime.STATE_NONNEG, y00, y10), T)
        assert probe.feasible
        assert probe.control is not None
        assert probe.control.min() >= 0.0
        assert probe.min_state is not None
        assert probe.min_state >= -TOL_STATE

    def test_state_regime_too_fast(self, op_small: DirichletOperator) -> None:
        """Test the state regime is certified infeasible in half a unit of time."""
        probe = feasible_at(_query(op_small, Regime.STATE_NONNEG), 0.5)
        assert probe.status is Feasibility.INFEASIBLE
        assert not probe.witness_based


class TestStateProgram:
    """Test the station-constrained linear program."""

    def test_hard_station_rows(self, op_small: DirichletOperator) -> None:
        """Test the program meets the target with nonnegative station positions."""
        query = _query(op_small, Regime.STATE_NONNEG)
        imap = assemble_input_map(query.problem(2.0))
        target = imap.defect(query.y_from, query.y_to)
        status, coefficients, residual = _state_program(query, imap, target, 1)
        assert status is Feasibility.FEASIBLE
        assert coefficients.min() >= 0.0
        assert residual <= TOL_FEAS_REL * np.linalg.norm(target) + TOL_FEAS_ABS
        free, response = _state_stations(query, imap)
        assert (free + response @ coefficients).min() >= -1e-8

    def test_refined_stations(self, op_small: DirichletOperator) -> None:
        """Test refining adds station times and keeps every grid point."""
        query = _query(op_small, Regime.STATE_NONNEG)
        imap = assemble_input_map(query.problem(2.0))
        coarse, _ = _state_stations(query, imap)
        fine, response = _state_stations(query, imap, 4)
        assert fine.size > coarse.size
        assert fine.size % op_small.n == 0
        assert response.shape == (fine.size, imap.channels * imap.nodes)

    def test_unreachable_target(self, op_small: DirichletOperator) -> None:
        """Test a target out of reach in half a unit of time is refused."""
        query = _query(op_small, Regime.STATE_NONNEG)
        imap = assemble_input_map(query.problem(0.5))
        target = imap.defect(query.y_from, query.y_to)
        status, _, _ = _state_program(query, imap, target, 1)
        assert status is not Feasibility.FEASIBLE


class TestBisect:
    """Test lattice bisection."""

    def test_threshold(self, op_medium: DirichletOperator) -> None:
        """Test bisection lands on the first feasible lattice time."""
        query = _query(op_medium, Regime.UNCONSTRAINED)
        estimate = bisect(query, probe=_threshold_prober(0.7))
        dt = op_medium.grid.h
        assert estimate.estimate == pytest.approx(45 * dt)
        assert estimate.uncertainty == pytest.approx(2 * dt)
        assert estimate.summary()["probes"] == len(estimate.probes)

    def test_inconclusive_counts_as_infeasible(self, op_medium: DirichletOperator) -> None:
        """Test inconclusive probes push the estimate up."""
        query = _query(op_medium, Regime.CONTROL_NONNEG)
        estimate = bisect(query, probe=_threshold_prober(0.7, Feasibility.INCONCLUSIVE))
        assert estimate.estimate == pytest.approx(45 * op_medium.grid.h)

    def test_top_infeasible(self, op_medium: DirichletOperator) -> None:
        """Test an infeasible upper end is reported."""
        query = _query(op_medium, Regime.UNCONSTRAINED)
        with pytest.raises(BracketError, match="T_hi"):
            bisect(query, probe=_threshold_prober(5.0))

    def test_bottom_feasible(self, op_medium: DirichletOperator) -> None:
        """Test a feasible lower end is reported."""
        query = _query(op_medium, Regime.UNCONSTRAINED)
        with pytest.raises(BracketError, match="T_lo"):
            bisect(query, probe=_threshold_prober(0.1))

    def test_unconstrained_minimal_time(self, op_small: DirichletOperator) -> None:
        """Test the unconstrained minimal time of two-ended control is one."""
        estimate = bisect(_query(op_small, Regime.UNCONSTRAINED))
        dt = op_small.grid.h
        assert 1.0 - 2 * dt <= estimate.estimate <= 1.0 + 2 * dt

    def test_nonneg_not_faster(self, op_small: DirichletOperator) -> None:
        """Test nonnegative controls need at least the unconstrained time."""
        free = bisect(_query(op_small, Regime.UNCONSTRAINED))
        nonneg = bisect(_query(op_small, Regime.CONTROL_NONNEG))
        assert nonneg.estimate >= free.estimate - 2 * op_small.grid.h
        assert nonneg.witness is not None
        assert nonneg.witness.min() >= 0.0

    def test_state_not_faster(self, op_small: DirichletOperator) -> None:
        """Test the state regime needs at least the nonnegative-control time."""
        dt = op_small.grid.h
        nonneg = bisect(_query(op_small, Regime.CONTROL_NONNEG))
        state = bisect(_query(op_small, Regime.STATE_NONNEG))
        assert state.estimate >= nonneg.estimate - 2 * dt
        assert state.estimate == pytest.approx(1.0, abs=0.25)
        assert state.witness is not None
        assert state.witness.min() >= 0.0

    @pytest.mark.parametrize("regime", list(Regime))
    def test_feasibility_monotone(self, op_small: DirichletOperator, regime: Regime) -> None:
        """Test a feasible horizon stays feasible when lengthened."""
        query = _query(op_small, regime)
        verdicts = [feasible_at(query, T).feasible for T in (0.5, 1.25, 1.5, 2.0)]
        assert verdicts == sorted(verdicts)
        assert verdicts[-1]

    @pytest.mark.parametrize("regime", list(Regime))
    def test_constants_all_regimes_fine_grid(
        self, op_511: DirichletOperator, regime: Regime
    ) -> None:
        """Test every regime links 1 to 2 in unit time on 511 points."""
        estimate = bisect(_query(op_511, regime))
        dt = op_511.grid.h
        assert 1.0 - 2 * dt <= estimate.estimate <= 1.0 + 2 * dt


class TestEstimateRegimes:
    """Test concurrent estimation."""

    async def test_all_regimes(self, op_medium: DirichletOperator) -> None:
        """Test every regime is bisected and keyed by regime."""
        query = _query(op_medium, Regime.UNCONSTRAINED)

        def fake_bisect(q: MinTimeQuery) -> MinTimeEstimate:
            return MinTimeEstimate(
                regime=q.regime, estimate=1.0, uncertainty=0.0, bracket=q.bracket, probes=[]
            )

        with patch("wave_positivity.mintime.bisect", side_effect=fake_bisect) as mock_bisect:
            results = await estimate_regimes(query, threads=2)
        assert set(results) == set(Regime)
        assert all(r.regime is regime for regime, r in results.items())
        assert mock_bisect.call_count == 3

    async def test_real_unconstrained(self, op_small: DirichletOperator) -> None:
        """Test a single real regime through worker threads."""
        query = _query(op_small, Regime.CONTROL_NONNEG)
        results = await estimate_regimes(query, [Regime.UNCONSTRAINED])
        estimate = results[Regime.UNCONSTRAINED].estimate
        assert estimate == pytest.approx(1.0, abs=2 * op_small.grid.h)

    async def test_real_regimes_ordered(self, op_small: DirichletOperator) -> None:
        """Test more constraints never give a shorter minimal time."""
        results = await estimate_regimes(_query(op_small, Regime.UNCONSTRAINED), threads=3)
        slack = 2 * op_small.grid.h
        free, nonneg, state = (
            results[regime].estimate
            for regime in (Regime.UNCONSTRAINED, Regime.CONTROL_NONNEG, Regime.STATE_NONNEG)
        )
        assert free <= nonneg + slack
        assert nonneg <= state + slack


class TestExplicitControls:
    """Test the explicit and minimal-time boundary controls."""

    def test_explicit_breakpoints(self) -> None:
        """Test the explicit controls hold and ramp at the right times."""
        u0, u1 = prop51_controls(1.0, 2.0, 2.0)
        assert u0.breakpoints == (0.0, 1.0, 2.0)
        assert u0.values == (1.0, 1.0, 2.0)
        assert u1.breakpoints == (0.0, 1.0, 2.0)
        assert u1.values == (1.0, 2.0, 2.0)

    def test_explicit_needs_long_horizon(self) -> None:
        """Test T must exceed one."""
        with pytest.raises(ValueError, match="T > 1"):
            prop51_controls(1.0, 2.0, 1.0)

    def test_explicit_nonnegative_constants(self) -> None:
        """Test negative constants are refused."""
        with pytest.raises(ValueError, match="nonnegative"):
            prop51_controls(-1.0, 2.0, 2.0)

    def test_min_time_family(self) -> None:
        """Test the constant controls along lambda."""
        assert prop51_min_time_controls(1, 2, Fraction(0)) == (1, 2)
        assert prop51_min_time_controls(1, 2, Fraction(1, 2)) == (Fraction(3, 2), Fraction(3, 2))
        assert prop51_min_time_controls(1, 2, Fraction(1)) == (2, 1)
        with pytest.raises(ValueError, match="lambda"):
            prop51_min_time_controls(1, 2, Fraction(5, 4))

    def test_verify_default(self) -> None:
        """Test the explicit controls and the whole family are exact and nonnegative."""
        check = verify_prop51(lattice=101)
        assert check.ok
        assert check.explicit_exact
        assert check.min_time_exact
        assert set(check.family) == {"0", "1/4", "1/2", "3/4", "1"}
        assert check.explicit_min_state >= 0.0
        assert check.summary()["exact_final"] is True

    def test_verify_other_horizon(self) -> None:
        """Test the explicit controls are exact for a fractional horizon."""
        check = verify_prop51(Fraction(3), Fraction(1, 2), Fraction(5, 2), lattice=61)
        assert check.ok
        assert check.summary()["min_state"] >= 0.0
