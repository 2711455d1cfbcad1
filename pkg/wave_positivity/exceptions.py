"""Exceptions for the wave positivity laboratory."""

from __future__ import annotations


class WavePositivityError(Exception):
    """Base exception for wave positivity errors."""


class NonFiniteInputError(WavePositivityError):
    """Potential, state or control samples contain NaN or Inf."""


class GridMismatchError(WavePositivityError):
    """Operator, state and control live on different grids."""


class FredholmError(WavePositivityError):
    """Zero lies in the spectrum, steady problems are ill-posed."""


class NotCoerciveError(WavePositivityError):
    """The operator has a nonpositive eigenvalue."""


class LatticeError(WavePositivityError):
    """A time does not fit the step lattice or lies outside the horizon."""


class BracketError(LatticeError):
    """Bisection bracket does not separate infeasible from feasible."""


class PositivityMarginError(WavePositivityError):
    """A control that must stay above a margin dips below it."""

    def __init__(self, message: str, location: int | None = None) -> None:
        """Initialize with the offending sample index."""
        super().__init__(message)
        self.location = location


class UnreachableError(WavePositivityError):
    """Target cannot be reached at this discretization."""

    def __init__(self, message: str, residual: float) -> None:
        """Initialize with the achieved residual."""
        super().__init__(message)
        self.residual = residual


class SynthesisError(WavePositivityError):
    """A multi-step synthesis aborted."""

    def __init__(self, message: str, step: int | None = None) -> None:
        """Initialize with the failing step index."""
        super().__init__(message)
        self.step = step


class ConfigError(WavePositivityError):
    """Experiment configuration is invalid."""


class OutOfDomainError(WavePositivityError):
    """A query point lies outside the space-time rectangle."""
