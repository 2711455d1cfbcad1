"""Experiment configuration: key=value files, environment overrides, validation."""

from __future__ import annotations

import logging
import os
from collections.abc import Callable, Mapping
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np
import voluptuous as vol

from .const import (
    DEFAULT_SMOOTHNESS,
    DEFAULT_T0,
    ENV_PREFIX,
    PROP51_LATTICE,
    TOL_FEAS_REL,
    TOL_FULL,
    TOL_REACH,
    TOL_STATE,
)
from .exceptions import ConfigError
from .operator import DirichletOperator, FloatArray, assemble
from .propagator import Boundary, Interior, Support

_LOGGER = logging.getLogger(__name__)

CONF_N = "n"
CONF_C = "c"
CONF_SUPPORT = "support"
CONF_CHI = "chi"
CONF_HORIZON = "horizon"
CONF_T0 = "t0"
CONF_SIGMA = "sigma"
CONF_EPSILON = "epsilon"
CONF_U0 = "u0"
CONF_U1 = "u1"
CONF_Y00 = "y00"
CONF_Y10 = "y10"
CONF_T_LO = "t_lo"
CONF_T_HI = "t_hi"
CONF_REGIMES = "regimes"
CONF_MODE_CUT = "mode_cut"
CONF_SMOOTHNESS = "smoothness"
CONF_TARGET = "target"
CONF_ANCHOR = "anchor"
CONF_LATTICE = "lattice"
CONF_TOL_REACH = "tol_reach"
CONF_TOL_FULL = "tol_full"
CONF_TOL_FEAS = "tol_feas"
CONF_TOL_STATE = "tol_state"
CONF_STATE = "state"
CONF_SWEEP_KEY = "sweep_key"
CONF_SWEEP_VALUES = "sweep_values"
CONF_SWEEP_COMMAND = "sweep_command"
CONF_SEED = "seed"
CONF_THREADS = "threads"
CONF_OUT = "out"

SUPPORTS = ["boundary", "left", "right", "interior"]
TARGETS = ["zero", "steady", "bump"]
REGIMES = ["unconstrained", "control_nonneg", "state_nonneg"]
SWEEP_COMMANDS = ["steady", "staircase", "link", "mintime", "prop51"]

DEFAULTS: dict[str, Any] = {
    CONF_N: 255,
    CONF_C: "0",
    CONF_SUPPORT: "boundary",
    CONF_CHI: "0,1",
    CONF_HORIZON: 2.0,
    CONF_T0: DEFAULT_T0,
    CONF_SIGMA: None,
    CONF_EPSILON: None,
    CONF_U0: 1.0,
    CONF_U1: 2.0,
    CONF_Y00: 1.0,
    CONF_Y10: 2.0,
    CONF_T_LO: 0.25,
    CONF_T_HI: 2.0,
    CONF_REGIMES: ",".join(REGIMES),
    CONF_MODE_CUT: None,
    CONF_SMOOTHNESS: DEFAULT_SMOOTHNESS,
    CONF_TARGET: "zero",
    CONF_ANCHOR: 0.5,
    CONF_LATTICE: PROP51_LATTICE,
    CONF_TOL_REACH: TOL_REACH,
    CONF_TOL_FULL: TOL_FULL,
    CONF_TOL_FEAS: TOL_FEAS_REL,
    CONF_TOL_STATE: TOL_STATE,
    CONF_STATE: False,
    CONF_SWEEP_KEY: CONF_SIGMA,
    CONF_SWEEP_VALUES: "",
    CONF_SWEEP_COMMAND: "staircase",
    CONF_SEED: 0,
    CONF_THREADS: 1,
    CONF_OUT: "out",
}


def _optional(validator: Callable[[Any], Any]) -> Callable[[Any], Any]:
    """Accept None, an empty string or 'none' as missing."""

    def check(value: Any) -> Any:
        if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none")):
            return None
        return validator(value)

    return check


def _interval(value: Any) -> str:
    """Validate an 'a,b' subinterval of [0, 1]."""
    try:
        low, high = (float(part) for part in str(value).split(","))
    except ValueError as err:
        raise vol.Invalid(f"expected 'a,b', got {value!r}") from err
    if not 0.0 <= low < high <= 1.0:
        raise vol.Invalid(f"interval {value!r} must satisfy 0 <= a < b <= 1")
    return f"{low:g},{high:g}"


def _regime_list(value: Any) -> str:
    names = [part.strip() for part in str(value).split(",") if part.strip()]
    if not names or any(name not in REGIMES for name in names):
        raise vol.Invalid(f"regimes must be a comma list of {REGIMES}, got {value!r}")
    return ",".join(names)


def _float_list(value: Any) -> str:
    parts = [part.strip() for part in str(value).split(",") if part.strip()]
    try:
        return ",".join(f"{float(part):g}" for part in parts)
    except ValueError as err:
        raise vol.Invalid(f"expected comma separated numbers, got {value!r}") from err


_POSITIVE = vol.All(vol.Coerce(float), vol.Range(min=0.0, min_included=False))

EXPERIMENT_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_N): vol.All(vol.Coerce(int), vol.Range(min=2)),
        vol.Required(CONF_C): vol.All(vol.Coerce(str), vol.Length(min=1)),
        vol.Required(CONF_SUPPORT): vol.In(SUPPORTS),
        vol.Required(CONF_CHI): _interval,
        vol.Required(CONF_HORIZON): _POSITIVE,
        vol.Required(CONF_T0): _POSITIVE,
        vol.Required(CONF_SIGMA): _optional(vol.Coerce(float)),
        vol.Required(CONF_EPSILON): _optional(_POSITIVE),
        vol.Required(CONF_U0): vol.Coerce(float),
        vol.Required(CONF_U1): vol.Coerce(float),
        vol.Required(CONF_Y00): vol.All(vol.Coerce(float), vol.Range(min=0.0)),
        vol.Required(CONF_Y10): vol.All(vol.Coerce(float), vol.Range(min=0.0)),
        vol.Required(CONF_T_LO): _POSITIVE,
        vol.Required(CONF_T_HI): _POSITIVE,
        vol.Required(CONF_REGIMES): _regime_list,
        vol.Required(CONF_MODE_CUT): _optional(vol.All(vol.Coerce(int), vol.Range(min=1))),
        vol.Required(CONF_SMOOTHNESS): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Required(CONF_TARGET): vol.In(TARGETS),
        vol.Required(CONF_ANCHOR): _POSITIVE,
        vol.Required(CONF_LATTICE): vol.All(vol.Coerce(int), vol.Range(min=3)),
        vol.Required(CONF_TOL_REACH): _POSITIVE,
        vol.Required(CONF_TOL_FULL): _POSITIVE,
        vol.Required(CONF_TOL_FEAS): _POSITIVE,
        vol.Required(CONF_TOL_STATE): vol.All(vol.Coerce(float), vol.Range(min=0.0)),
        vol.Required(CONF_STATE): vol.Boolean(),
        vol.Required(CONF_SWEEP_KEY): vol.In(
            [CONF_N, CONF_SIGMA, CONF_EPSILON, CONF_T0, CONF_HORIZON, CONF_U1, CONF_Y10]
        ),
        vol.Required(CONF_SWEEP_VALUES): _float_list,
        vol.Required(CONF_SWEEP_COMMAND): vol.In(SWEEP_COMMANDS),
        vol.Required(CONF_SEED): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Required(CONF_THREADS): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Required(CONF_OUT): vol.Coerce(str),
    }
)


@dataclass(frozen=True, kw_only=True)
class ExperimentConfig:
    """Resolved experiment configuration."""

    n: int
    c: str
    support: str
    chi: str
    horizon: float
    t0: float
    sigma: float | None
    epsilon: float | None
    u0: float
    u1: float
    y00: float
    y10: float
    t_lo: float
    t_hi: float
    regimes: str
    mode_cut: int | None
    smoothness: int
    target: str
    anchor: float
    lattice: int
    tol_reach: float
    tol_full: float
    tol_feas: float
    tol_state: float
    state: bool
    sweep_key: str
    sweep_values: str
    sweep_command: str
    seed: int
    threads: int
    out: str

    def as_dict(self) -> dict[str, Any]:
        """Plain mapping for reports."""
        return asdict(self)

    def with_changes(self, **changes: Any) -> ExperimentConfig:
        """Revalidated copy with some keys changed."""
        return validate({**self.as_dict(), **changes})

    @property
    def sweep(self) -> list[float]:
        """Values of the swept key."""
        return [float(v) for v in self.sweep_values.split(",") if v]

    @property
    def regime_names(self) -> list[str]:
        """Regimes to bisect."""
        return self.regimes.split(",")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse key=value lines; '#' starts a comment, blank lines are skipped."""
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if key in values:
            raise ConfigError(f"{source}:{number}: duplicate key {key!r}")
        values[key] = value
    return values


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    """Keys taken from WAVEPOS_* environment variables."""
    environ = os.environ if environ is None else environ
    return {
        name[len(ENV_PREFIX) :].lower(): value
        for name, value in environ.items()
        if name.startswith(ENV_PREFIX)
    }


def validate(values: Mapping[str, Any]) -> ExperimentConfig:
    """Validate a complete mapping and build the config."""
    try:
        data = EXPERIMENT_SCHEMA(dict(values))
    except vol.Invalid as err:
        raise ConfigError(f"invalid configuration: {err}") from err
    if data[CONF_T_LO] >= data[CONF_T_HI]:
        raise ConfigError(f"t_lo={data[CONF_T_LO]} must be below t_hi={data[CONF_T_HI]}")
    return ExperimentConfig(**data)


def load_config(
    path: Path | None = None,
    *,
    environ: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> ExperimentConfig:
    """Resolve defaults < file < environment < explicit overrides."""
    merged: dict[str, Any] = dict(DEFAULTS)
    if path is not None:
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        merged.update(parse_config_text(text, str(path)))
    env = env_overrides(environ)
    if env:
        _LOGGER.debug("Environment overrides: %s", sorted(env))
    merged.update(env)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return validate(merged)


def potential_samples(config: ExperimentConfig, base: Path | None = None) -> FloatArray:
    """Potential as a constant or as samples read from a whitespace/comma separated file."""
    try:
        return np.array([float(config.c)])
    except ValueError:
        pass
    path = Path(config.c)
    if base is not None and not path.is_absolute():
        path = base / path
    try:
        samples = np.array(path.read_text(encoding="utf-8").replace(",", " ").split(), dtype=float)
    except (OSError, ValueError) as err:
        raise ConfigError(f"cannot read potential samples from {path}: {err}") from err
    if samples.size not in (1, config.n):
        raise ConfigError(f"potential file has {samples.size} samples, expected 1 or n={config.n}")
    return samples


def build_operator(config: ExperimentConfig, base: Path | None = None) -> DirichletOperator:
    """Assemble the operator described by the config."""
    return assemble(potential_samples(config, base), config.n)


def build_support(config: ExperimentConfig, op: DirichletOperator) -> Support:
    """Control support described by the config."""
    if config.support == "boundary":
        return Boundary(True, True)
    if config.support == "left":
        return Boundary(True, False)
    if config.support == "right":
        return Boundary(False, True)
    low, high = (float(part) for part in config.chi.split(","))
    x = op.grid.x
    return Interior(((x >= low) & (x <= high)).astype(np.float64))
