"""Synthesis reports and their JSON/CSV artifacts."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import voluptuous as vol

from .const import FLOAT_DIGITS, REPORT_FILE, REPORT_SCHEMA_VERSION, TIMING_FILE
from .operator import FloatArray
from .propagator import Boundary, ControlSignal, State, Trajectory

_LOGGER = logging.getLogger(__name__)


@dataclass(kw_only=True)
class SynthesisReport:
    """Outcome of a synthesis run, checked against its postconditions."""

    control: ControlSignal | None
    final_state: State | None
    min_control: float
    min_state: float | None = None
    final_error: float = 0.0
    final_error_full: float = 0.0
    step_residuals: list[float] = field(default_factory=list)
    total_time: float = 0.0
    steps: int = 1
    wall_time: float = 0.0
    trajectory: Trajectory | None = None
    phases: dict[str, tuple[int, int]] = field(default_factory=dict)
    details: dict[str, Any] = field(default_factory=dict)

    def summary(self) -> dict[str, Any]:
        """Scalar fields for the JSON report."""
        return {
            "min_control": self.min_control,
            "min_state": self.min_state,
            "final_error": self.final_error,
            "final_error_full": self.final_error_full,
            "max_step_residual": max(self.step_residuals, default=0.0),
            "total_time": self.total_time,
            "steps": self.steps,
        }


REPORT_SCHEMA = vol.Schema(
    {
        vol.Required("schema_version"): REPORT_SCHEMA_VERSION,
        vol.Required("command"): vol.In(
            ["steady", "staircase", "link", "mintime", "prop51", "sweep"]
        ),
        vol.Required("status"): vol.In(["ok", "failed"]),
        vol.Required("config"): dict,
        vol.Required("config_sha256"): vol.Match(r"^[0-9a-f]{64}$"),
        vol.Optional("summary"): dict,
        vol.Optional("details"): dict,
        vol.Optional("error"): str,
    }
)


def round_floats(value: Any, digits: int = FLOAT_DIGITS) -> Any:
    """Round every float in a nested structure to fixed significant digits."""
    if isinstance(value, bool | int | str) or value is None:
        return value
    if isinstance(value, float | np.floating):
        number = float(value)
        if not math.isfinite(number):
            return None
        return float(f"{number:.{digits}g}")
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.ndarray):
        return round_floats(value.tolist(), digits)
    if isinstance(value, Mapping):
        return {str(k): round_floats(v, digits) for k, v in value.items()}
    if isinstance(value, Sequence):
        return [round_floats(v, digits) for v in value]
    return str(value)


def config_digest(config: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a resolved config."""
    canonical = json.dumps(round_floats(dict(config)), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def build_report(
    command: str,
    config: Mapping[str, Any],
    *,
    summary: Mapping[str, Any] | None = None,
    details: Mapping[str, Any] | None = None,
    error: str | None = None,
) -> dict[str, Any]:
    """Assemble and validate a JSON report."""
    report: dict[str, Any] = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": command,
        "status": "failed" if error else "ok",
        "config": round_floats(dict(config)),
        "config_sha256": config_digest(config),
    }
    if summary is not None:
        report["summary"] = round_floats(dict(summary))
    if details is not None:
        report["details"] = round_floats(dict(details))
    if error is not None:
        report["error"] = error
    return REPORT_SCHEMA(report)  # type: ignore[no-any-return]


def write_report(out: Path, report: Mapping[str, Any], wall_time: float | None = None) -> Path:
    """Write report.json (byte-stable) and, separately, the wall-clock timing."""
    out.mkdir(parents=True, exist_ok=True)
    path = out / REPORT_FILE
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    if wall_time is not None:
        (out / TIMING_FILE).write_text(
            json.dumps({"wall_time": round(wall_time, 6)}) + "\n", encoding="utf-8"
        )
    _LOGGER.info("Wrote %s", path)
    return path


def _fmt(value: float) -> str:
    return f"{value:.{FLOAT_DIGITS}g}"


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _thin(count: int, max_rows: int | None) -> range:
    """Every k-th index, so that at most max_rows are kept."""
    step = 1 if not max_rows or count <= max_rows else math.ceil(count / max_rows)
    return range(0, count, step)


def control_locations(control: ControlSignal, x: FloatArray) -> list[str]:
    """CSV `loc` labels: grid coordinates for interior controls, ends for boundary ones."""
    if isinstance(control.support, Boundary):
        return control.support.labels
    return [_fmt(float(v)) for v in x]


def write_control_csv(
    path: Path,
    control: ControlSignal,
    x: FloatArray,
    phases: Mapping[str, tuple[int, int]] | None = None,
    *,
    max_rows: int | None = None,
) -> Path:
    """Long-form control: t,loc,value (plus phase when phases are given)."""
    locs = control_locations(control, x)
    labels = [""] * (control.steps + 1)
    for name, (first, last) in (phases or {}).items():
        for i in range(first, last + 1):
            labels[i] = labels[i] or name

    def rows() -> Iterable[list[str]]:
        times = control.times
        for i in _thin(times.size, max_rows):
            for loc, value in zip(locs, control.samples[i], strict=True):
                row = [_fmt(float(times[i])), loc, _fmt(float(value))]
                if phases:
                    row.append(labels[i])
                yield row

    header = ["t", "loc", "value"] + (["phase"] if phases else [])
    return _write_rows(path, header, rows())


def write_trajectory_csv(path: Path, traj: Trajectory, *, max_rows: int | None = None) -> Path:
    """Long-form trajectory: t,x,y,v, thinned to at most max_rows stored times."""
    x = traj.op.grid.x
    ys = traj.positions()
    vs = traj.velocities()

    def rows() -> Iterable[list[str]]:
        for i in _thin(len(traj), max_rows):
            t = traj.times[i]
            for j, xj in enumerate(x):
                yield [_fmt(float(t)), _fmt(float(xj)), _fmt(ys[i, j]), _fmt(vs[i, j])]

    return _write_rows(path, ["t", "x", "y", "v"], rows())


def write_profile_csv(path: Path, x: FloatArray, y: FloatArray) -> Path:
    """Steady profile: x,y."""
    return _write_rows(
        path, ["x", "y"], ([_fmt(float(a)), _fmt(float(b))] for a, b in zip(x, y, strict=True))
    )


def write_probes_csv(path: Path, probes: Iterable[Sequence[Any]]) -> Path:
    """Bisection probes: T,regime,feasible,residual."""
    rows = (
        [_fmt(t), regime, str(feasible).lower(), _fmt(res)]
        for t, regime, feasible, res in probes
    )
    return _write_rows(path, ["T", "regime", "feasible", "residual"], rows)
