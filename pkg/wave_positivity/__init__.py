"""Nonnegative control of the one-dimensional wave equation."""

from __future__ import annotations

from .operator import DirichletOperator, EnergyNorm, Grid, StateSpace, assemble
from .propagator import Boundary, ControlSignal, Interior, State, propagate
from .report import SynthesisReport
from .steady import SteadyPair, solve_steady_boundary, solve_steady_interior

__version__ = "0.1.0"

__all__ = [
    "Boundary",
    "ControlSignal",
    "DirichletOperator",
    "EnergyNorm",
    "Grid",
    "Interior",
    "State",
    "StateSpace",
    "SteadyPair",
    "SynthesisReport",
    "assemble",
    "propagate",
    "solve_steady_boundary",
    "solve_steady_interior",
]
