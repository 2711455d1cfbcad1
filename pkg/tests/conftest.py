"""Fixtures for wave positivity tests."""

from __future__ import annotations

import numpy as np
import pytest

from wave_positivity.operator import DirichletOperator, assemble
from wave_positivity.propagator import Boundary, State
from wave_positivity.steady import SteadyPair, solve_steady_boundary, solve_steady_interior


@pytest.fixture(scope="session")
def op_small() -> DirichletOperator:
    """Free string on 31 interior points."""
    return assemble([0.0], 31)


@pytest.fixture(scope="session")
def op_medium() -> DirichletOperator:
    """Free string on 63 interior points."""
    return assemble([0.0], 63)


@pytest.fixture(scope="session")
def op_127() -> DirichletOperator:
    """Free string on 127 interior points."""
    return assemble([0.0], 127)


@pytest.fixture(scope="session")
def op_255() -> DirichletOperator:
    """Free string on 255 interior points."""
    return assemble([0.0], 255)


@pytest.fixture(scope="session")
def op_511() -> DirichletOperator:
    """Free string on 511 interior points."""
    return assemble([0.0], 511)


@pytest.fixture
def boundary() -> Boundary:
    """Control at both ends."""
    return Boundary(True, True)


def boundary_pair(op: DirichletOperator, value: float) -> SteadyPair:
    """Steady pair of equal boundary values."""
    return solve_steady_boundary(op, value, value)


def interior_pair(op: DirichletOperator, value: float) -> SteadyPair:
    """Steady pair of a constant interior control with chi = 1."""
    return solve_steady_interior(op, value, np.ones(op.n))


def mode_state(op: DirichletOperator, k: int = 1, *, velocity: bool = False) -> State:
    """The k-th eigenvector as position (or velocity) at rest otherwise."""
    phi = op.eigenvectors[:, k - 1].copy()
    zero = np.zeros(op.n)
    return State(zero, phi) if velocity else State(phi, zero)
