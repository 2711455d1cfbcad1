"""Tests for the time cutoffs."""

from __future__ import annotations

import numpy as np
import pytest

from wave_positivity.const import RHO_WIDTH, ZETA_WIDTH
from wave_positivity.cutoffs import polynomial_bump, rho, smooth_bump, smooth_step, zeta


class TestCutoffs:
    """Test cutoff profiles."""

    def test_smooth_step_limits(self) -> None:
        """Test the step is 0 below 0, 1 above 1 and 1/2 in the middle."""
        np.testing.assert_allclose(smooth_step([-1.0, 0.0, 0.5, 1.0, 2.0]), [0, 0, 0.5, 1, 1])

    def test_rho_support(self) -> None:
        """Test rho is 1 before 0 and vanishes after its width."""
        t = np.linspace(-0.5, 1.0, 301)
        values = rho(t)
        assert np.all(values[t <= 0.0] == 1.0)
        assert np.all(values[t >= RHO_WIDTH] == 0.0)
        assert np.all(np.diff(values) <= 1e-15)

    def test_zeta_plateau(self) -> None:
        """Test zeta is 1 on [-1/2, 1/2] and zero far out."""
        assert np.all(zeta(np.linspace(-0.5, 0.5, 21)) == 1.0)
        far = 0.5 + ZETA_WIDTH
        np.testing.assert_allclose(zeta([-far - 0.01, far + 0.01]), 0.0)
        assert 0.0 < float(zeta(0.7)) < 1.0

    def test_smooth_bump(self) -> None:
        """Test the bump peaks at 1 and vanishes outside (0, 1)."""
        assert float(smooth_bump(0.5)) == pytest.approx(1.0)
        np.testing.assert_allclose(smooth_bump([-0.1, 0.0, 1.0, 1.3]), 0.0)

    def test_polynomial_bump(self) -> None:
        """Test the polynomial bump peak and support."""
        assert float(polynomial_bump(1.5, 1.0, 2.0, 2)) == pytest.approx(1.0)
        np.testing.assert_allclose(polynomial_bump([0.5, 1.0, 2.0, 2.5], 1.0, 2.0, 2), 0.0)
