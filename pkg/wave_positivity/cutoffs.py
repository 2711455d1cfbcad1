"""Smooth cutoff profiles used to blend controls in time."""

from __future__ import annotations

import numpy as np
import numpy.typing as npt

from .const import RHO_WIDTH, ZETA_WIDTH
from .operator import FloatArray


def _flat(s: FloatArray) -> FloatArray:
    """exp(-1/s) for s > 0, zero otherwise."""
    out = np.zeros_like(s)
    pos = s > 0.0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smooth_step(s: npt.ArrayLike) -> FloatArray:
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    arr = np.asarray(s, dtype=np.float64)
    up = _flat(arr)
    return up / (up + _flat(1.0 - arr))


def rho(t: npt.ArrayLike) -> FloatArray:
    """Equal to 1 on (-inf, 0], to 0 on [RHO_WIDTH, inf)."""
    return 1.0 - smooth_step(np.asarray(t, dtype=np.float64) / RHO_WIDTH)


def zeta(t: npt.ArrayLike) -> FloatArray:
    """Equal to 1 on [-1/2, 1/2], supported in [-1/2 - ZETA_WIDTH, 1/2 + ZETA_WIDTH]."""
    arr = np.abs(np.asarray(t, dtype=np.float64))
    return 1.0 - smooth_step((arr - 0.5) / ZETA_WIDTH)


def polynomial_bump(t: npt.ArrayLike, t0: float, t1: float, order: int) -> FloatArray:
    """((t - t0)(t1 - t) * 4 / L^2)^(order + 1) on [t0, t1], zero outside.

    Peaks at 1 in the middle; vanishes with `order` derivatives at both ends.
    """
    arr = np.asarray(t, dtype=np.float64)
    width = t1 - t0
    base = np.clip((arr - t0) * (t1 - arr) * 4.0 / width**2, 0.0, None)
    return base ** (order + 1)


def smooth_bump(t: npt.ArrayLike) -> FloatArray:
    """C-infinity bump supported in (0, 1) with value 1 at t = 1/2."""
    arr = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(arr)
    inside = (arr > 0.0) & (arr < 1.0)
    r = 2.0 * arr[inside] - 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r * r))
    return out
