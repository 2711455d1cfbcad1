"""Command line experiment runner."""

from __future__ import annotations

import argparse
import asyncio
import logging
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .config import ExperimentConfig, build_operator, build_support, load_config
from .const import (
    CLI_NAME,
    DEFAULT_SIGMA,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_SYNTHESIS_FAILURE,
    TOL_STAIRCASE_FINAL,
)
from .exceptions import ConfigError, WavePositivityError
from .mintime import MinTimeQuery, Regime, estimate_regimes, prop51_controls, verify_prop51
from .operator import DirichletOperator, assemble, check_coercive, check_fredholm
from .propagator import Boundary, State, Support, boundary_signal, dalembert, propagate
from .report import (
    build_report,
    write_control_csv,
    write_probes_csv,
    write_profile_csv,
    write_report,
    write_trajectory_csv,
)
from .staircase import plan, sampled_constant, synthesize, synthesize_state_constrained
from .steady import (
    SteadyPair,
    check_lower_bound,
    solve_steady_boundary,
    solve_steady_interior,
)
from .trajectory import (
    ControlledTrajectory,
    bump_trajectory,
    link,
    steady_trajectory,
)

_LOGGER = logging.getLogger(__name__)

CSV_MAX_ROWS = 2000


@dataclass
class CommandResult:
    """What a subcommand reports; `ok` is False when a postcondition failed."""

    summary: dict[str, Any]
    details: dict[str, Any] = field(default_factory=dict)
    ok: bool = True


Command = Callable[[ExperimentConfig, Path, Path | None], CommandResult]


def steady_pair(op: DirichletOperator, support: Support, value: float) -> SteadyPair:
    """Steady pair of a spatially constant control."""
    if isinstance(support, Boundary):
        return solve_steady_boundary(op, value, value, support=support)
    return solve_steady_interior(op, value, support.chi)


def _setup(
    config: ExperimentConfig, base: Path | None
) -> tuple[DirichletOperator, Support]:
    op = build_operator(config, base)
    return op, build_support(config, op)


def run_steady(config: ExperimentConfig, out: Path, base: Path | None) -> CommandResult:
    """Solve both steady problems and report their margins."""
    op, support = _setup(config, base)
    summary: dict[str, Any] = {
        "fredholm": check_fredholm(op),
        "coercive": check_coercive(op),
        "lambda_1": float(op.eigenvalues[0]),
    }
    for name, value in (("u0", config.u0), ("u1", config.u1)):
        pair = steady_pair(op, support, value)
        summary[f"{name}_margin"] = check_lower_bound(pair, config.sigma or 0.0)
        summary[f"{name}_min_y"] = float(pair.y.min())
        summary[f"{name}_residual"] = pair.residual
        write_profile_csv(out / f"steady_{name}.csv", op.grid.x, pair.y)
    return CommandResult(summary=summary)


def run_staircase(config: ExperimentConfig, out: Path, base: Path | None) -> CommandResult:
    """Staircase between the steady states of u0 and u1."""
    op, support = _setup(config, base)
    pair0 = steady_pair(op, support, config.u0)
    pair1 = steady_pair(op, support, config.u1)
    sigma = DEFAULT_SIGMA if config.sigma is None else config.sigma
    staircase = plan(
        op, pair0, pair1, sigma, config.t0,
        mode_cut=config.mode_cut, smoothness=config.smoothness, tol_reach=config.tol_reach,
    )
    if config.state:
        report = synthesize_state_constrained(staircase)
    else:
        report = synthesize(staircase, stride=4)
    details = dict(report.details)
    details["C_sampled"] = sampled_constant(staircase, config.seed)
    details["state_constrained"] = config.state
    details["step_residuals"] = report.step_residuals
    if report.control is not None:
        write_control_csv(out / "control.csv", report.control, op.grid.x, max_rows=CSV_MAX_ROWS)
    if report.trajectory is not None:
        write_trajectory_csv(out / "trajectory.csv", report.trajectory, max_rows=CSV_MAX_ROWS)
    ok = report.final_error <= TOL_STAIRCASE_FINAL and report.min_control >= 0.0
    return CommandResult(summary=report.summary(), details=details, ok=ok)


def _target_trajectory(
    config: ExperimentConfig, op: DirichletOperator, support: Support
) -> ControlledTrajectory:
    if config.target == "zero":
        return steady_trajectory(steady_pair(op, support, 0.0))
    if config.target == "steady":
        return steady_trajectory(steady_pair(op, support, config.u1))
    return bump_trajectory(op, support, config.u1, anchor=config.anchor)


def run_link(config: ExperimentConfig, out: Path, base: Path | None) -> CommandResult:
    """Link the steady trajectory of u0 to the configured target trajectory."""
    op, support = _setup(config, base)
    traj0 = steady_trajectory(steady_pair(op, support, config.u0))
    traj1 = _target_trajectory(config, op, support)
    report = link(
        op,
        traj0,
        traj1,
        config.sigma,
        config.epsilon,
        T0=config.t0,
        mode_cut=config.mode_cut,
        tol_reach=config.tol_reach,
        tol_full=config.tol_full,
    )
    details = dict(report.details)
    details["target"] = config.target
    details["phases"] = {name: list(span) for name, span in report.phases.items()}
    if report.control is not None:
        write_control_csv(
            out / "control.csv", report.control, op.grid.x, report.phases, max_rows=CSV_MAX_ROWS
        )
    if report.trajectory is not None:
        write_trajectory_csv(out / "trajectory.csv", report.trajectory, max_rows=CSV_MAX_ROWS)
    ok = report.min_control >= 0.0 and details["full_relative"] <= config.tol_full
    return CommandResult(summary=report.summary(), details=details, ok=ok)


def run_mintime(config: ExperimentConfig, out: Path, base: Path | None) -> CommandResult:
    """Bisect the minimal time between the steady states of y00 and y10."""
    op, support = _setup(config, base)
    query = MinTimeQuery(
        op=op,
        y_from=steady_pair(op, support, config.y00).state,
        y_to=steady_pair(op, support, config.y10).state,
        support=support,
        regime=Regime.UNCONSTRAINED,
        bracket=(config.t_lo, config.t_hi),
        mode_cut=config.mode_cut,
        tol_state=config.tol_state,
        tol_reach=config.tol_reach,
        tol_feas=config.tol_feas,
    )
    regimes = [Regime(name) for name in config.regime_names]
    estimates = asyncio.run(estimate_regimes(query, regimes, threads=config.threads))
    write_probes_csv(
        out / "probes.csv",
        (probe.row() for regime in regimes for probe in estimates[regime].probes),
    )
    summary: dict[str, Any] = {
        f"T_{regime.value}": estimates[regime].estimate for regime in regimes
    }
    summary["uncertainty"] = estimates[regimes[0]].uncertainty
    slack = query.step * query.resolution_steps
    ordered = [estimates[r].estimate for r in Regime if r in estimates]
    monotone = all(b >= a - slack for a, b in zip(ordered, ordered[1:], strict=False))
    summary["regimes_ordered"] = monotone
    details = {regime.value: estimates[regime].summary() for regime in regimes}
    return CommandResult(summary=summary, details=details, ok=monotone)


def _modal_final_error(config: ExperimentConfig) -> float:
    """Discrete L2 distance of the modal final position to the target constant."""
    op = assemble([0.0], config.n)
    steps = max(1, round(config.horizon / op.grid.h))
    dt = config.horizon / steps
    u0, u1 = prop51_controls(config.y00, config.y10, config.horizon)
    control = boundary_signal(u0, u1, dt, steps)
    start = State.at_rest(np.full(op.n, config.y00))
    final = propagate(op, start, control, stride=steps).final
    return op.grid.l2(final.y - config.y10)


def run_prop51(config: ExperimentConfig, out: Path, base: Path | None) -> CommandResult:
    """Exact check of the explicit and minimal-time controls of the boundary-driven string."""
    if config.horizon <= 1.0:
        raise ConfigError(f"prop51 needs horizon > 1, got {config.horizon}")
    check = verify_prop51(config.y00, config.y10, config.horizon, lattice=config.lattice)
    summary = check.summary()
    details: dict[str, Any] = {
        "family": check.family,
        "modal_final_error": _modal_final_error(config),
    }
    u0, u1 = prop51_controls(config.y00, config.y10, config.horizon)
    x = np.linspace(0.0, 1.0, config.lattice)
    final = dalembert(config.y00, u0, u1, config.horizon, config.horizon, x)
    write_profile_csv(out / "final.csv", x, np.asarray(final, dtype=np.float64))
    return CommandResult(summary=summary, details=details, ok=check.ok)


COMMANDS: dict[str, Command] = {
    "steady": run_steady,
    "staircase": run_staircase,
    "link": run_link,
    "mintime": run_mintime,
    "prop51": run_prop51,
}


def run_sweep(config: ExperimentConfig, out: Path, base: Path | None) -> CommandResult:
    """Run one subcommand over the values of one key, fanned out to worker threads."""
    values = config.sweep
    if not values:
        raise ConfigError("sweep needs sweep_values")
    key = config.sweep_key
    runs = [
        config.with_changes(**{key: value, "out": str(out / f"{key}={value:g}")})
        for value in values
    ]

    async def fan_out() -> list[int]:
        limit = asyncio.Semaphore(config.threads)

        async def one(cfg: ExperimentConfig) -> int:
            async with limit:
                return await asyncio.to_thread(execute, config.sweep_command, cfg, base)

        return await asyncio.gather(*(one(cfg) for cfg in runs))

    codes = asyncio.run(fan_out())
    rows = [{"value": v, "exit_code": c} for v, c in zip(values, codes, strict=True)]
    return CommandResult(
        summary={"runs": len(rows), "failed": sum(1 for c in codes if c != EXIT_OK)},
        details={"key": config.sweep_key, "command": config.sweep_command, "runs": rows},
        ok=all(c == EXIT_OK for c in codes),
    )


def execute(command: str, config: ExperimentConfig, base: Path | None = None) -> int:
    """Run a subcommand, write its report and return the exit code."""
    runner = run_sweep if command == "sweep" else COMMANDS[command]
    out = Path(config.out)
    started = time.perf_counter()
    _LOGGER.info("Running %s into %s", command, out)
    error: str | None = None
    result: CommandResult | None = None
    code = EXIT_OK
    try:
        result = runner(config, out, base)
    except ConfigError as err:
        error, code = str(err), EXIT_CONFIG_ERROR
    except WavePositivityError as err:
        error, code = f"{type(err).__name__}: {err}", EXIT_SYNTHESIS_FAILURE
    except Exception as err:
        _LOGGER.exception("Unexpected error in %s", command)
        error, code = f"{type(err).__name__}: {err}", EXIT_SYNTHESIS_FAILURE
    if result is not None and not result.ok:
        error, code = "postcondition failed", EXIT_SYNTHESIS_FAILURE
    if error is not None:
        _LOGGER.error("%s failed: %s", command, error)

    report = build_report(
        command,
        config.as_dict(),
        summary=result.summary if result else None,
        details=result.details if result else None,
        error=error,
    )
    write_report(out, report, time.perf_counter() - started)
    return code


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per experiment."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value experiment file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument(
        "--log-level", default="info", choices=["debug", "info", "warning", "error"]
    )

    parser = argparse.ArgumentParser(
        prog=CLI_NAME, description="Nonnegative control of the 1-D wave equation."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("steady", parents=[common], help="steady states and their margins")
    staircase = sub.add_parser("staircase", parents=[common], help="staircase synthesis")
    staircase.add_argument("--state", action="store_true", help="also keep the state nonnegative")
    sub.add_parser("link", parents=[common], help="link two controlled trajectories")
    sub.add_parser("mintime", parents=[common], help="bisect minimal times for all regimes")
    sub.add_parser("prop51", parents=[common], help="exact check of the explicit controls")
    sub.add_parser("sweep", parents=[common], help="run a subcommand over one parameter")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    overrides = {
        "out": args.out,
        "seed": args.seed,
        "threads": args.threads,
        "state": True if getattr(args, "state", False) else None,
    }
    try:
        config = load_config(args.config, overrides=overrides)
    except ConfigError as err:
        _LOGGER.error("%s", err)
        return EXIT_CONFIG_ERROR
    base = args.config.parent if args.config else None
    return execute(args.command, config, base)
