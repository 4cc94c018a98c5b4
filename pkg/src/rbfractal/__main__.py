"""CLI entry point for ``rbfractal``."""

from __future__ import annotations

import dataclasses
import functools
import logging
import os
import sys
from pathlib import Path
from typing import TYPE_CHECKING

import click
import structlog

from rbfractal.errors import CertificationError, RBError

if TYPE_CHECKING:
    from collections.abc import Callable

    from rbfractal.config import ProblemConfig
    from rbfractal.runner import Command

structlog.configure(
    processors=[
        structlog.contextvars.merge_contextvars,
        structlog.processors.add_log_level,
        structlog.processors.StackInfoRenderer(),
        structlog.dev.set_exc_info,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.dev.ConsoleRenderer(),
    ],
    wrapper_class=structlog.make_filtering_bound_logger(logging.INFO),
    context_class=dict,
    logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
    cache_logger_on_first_use=True,
)

EXIT_CERTIFICATION = 1
EXIT_INPUT = 2


def _fail(exc: RBError) -> None:
    click.echo(f"Error: {exc}", err=True)
    sys.exit(EXIT_CERTIFICATION if isinstance(exc, CertificationError) else EXIT_INPUT)


def _load(
    ref: str,
    *,
    eps: float | None = None,
    depth: int | None = None,
    resolution: int | None = None,
    seed: int | None = None,
) -> ProblemConfig:
    from rbfractal.config import load_config

    config = load_config(ref)
    return config.with_overrides(eps=eps, depth=depth, resolution=resolution, seed=seed)


def _report(
    command: Command,
    config: ProblemConfig,
    out: Path,
    *,
    forward: bool = False,
) -> None:
    from rbfractal.runner import run

    report = run(config, out, command, forward=forward)
    for line in report.lines:
        click.echo(line)
    for path in report.paths:
        click.echo(f"wrote {path}")
    sys.exit(report.exit_code)


def _guarded[**P](fn: Callable[P, None]) -> Callable[P, None]:
    """Map library errors to ``Error: ...`` on stderr and exit codes 1 or 2."""

    @functools.wraps(fn)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> None:
        try:
            fn(*args, **kwargs)
        except RBError as exc:
            _fail(exc)

    return wrapper


config_option = click.option(
    "--config",
    "config_ref",
    type=click.STRING,
    required=True,
    help="Problem file (INI) or the name of a shipped example.",
)
out_option = click.option(
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("."),
    show_default=True,
    help="Directory for CSV/SVG artifacts.",
)
eps_option = click.option("--eps", type=float, default=None, help="Target a-priori bound.")
resolution_option = click.option(
    "--resolution", type=int, default=None, help="Grid nodes per dimension."
)


# ── CLI group ────────────────────────────────────────────────────────


@click.group(invoke_without_command=True)
@click.option("--verbose", is_flag=True, default=False, help="Log per-iteration progress.")
@click.version_option(package_name="rbfractal")
@click.pass_context
def main(ctx: click.Context, verbose: bool) -> None:
    """Construct, certify and evaluate fractal functions.

    Every command reads a problem file; the shipped examples can be named
    directly, e.g. ``rbfractal solve --config example1``.
    """
    if verbose:
        structlog.configure(wrapper_class=structlog.make_filtering_bound_logger(logging.DEBUG))
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


# ── check ────────────────────────────────────────────────────────────


@main.command()
@config_option
@resolution_option
@click.option("--seed", type=int, default=None, help="Seed of the empirical contraction estimate.")
@_guarded
def check(config_ref: str, resolution: int | None, seed: int | None) -> None:
    """Partition, contraction and condition certificates."""
    from rbfractal.runner import Command

    config = _load(config_ref, resolution=resolution, seed=seed)
    _report(Command.CHECK, config, Path("."))


# ── solve ────────────────────────────────────────────────────────────


@main.command()
@config_option
@out_option
@eps_option
@resolution_option
@_guarded
def solve(config_ref: str, out: Path, eps: float | None, resolution: int | None) -> None:
    """Iterate to the fixed point and export it."""
    from rbfractal.runner import Command

    config = _load(config_ref, eps=eps, resolution=resolution)
    _report(Command.SOLVE, config, out)


# ── trajectory ───────────────────────────────────────────────────────


@main.command()
@config_option
@out_option
@click.option("--depth", type=int, default=None, help="Number of operators composed.")
@resolution_option
@click.option(
    "--forward",
    is_flag=True,
    default=False,
    help="Compose T_k∘⋯∘T_1 instead of T_1∘⋯∘T_k (no convergence certificate).",
)
@_guarded
def trajectory(
    config_ref: str, out: Path, depth: int | None, resolution: int | None, forward: bool
) -> None:
    """Backward (or forward) trajectory of an operator schedule."""
    from rbfractal.runner import Command

    config = _load(config_ref, depth=depth, resolution=resolution)
    _report(Command.TRAJECTORY, config, out, forward=forward)


# ── quat ─────────────────────────────────────────────────────────────


@main.command()
@config_option
@out_option
@eps_option
@resolution_option
@click.option(
    "--side",
    type=click.Choice(["left", "right"]),
    default=None,
    help="Multiply by s_i from this side (overrides the problem file).",
)
@_guarded
def quat(
    config_ref: str, out: Path, eps: float | None, resolution: int | None, side: str | None
) -> None:
    """Quaternionic fixed point with graph and parametric projections."""
    from rbfractal.quaternion import Side
    from rbfractal.runner import Command

    config = _load(config_ref, eps=eps, resolution=resolution)
    if side is not None:
        config = dataclasses.replace(config, side=Side(side))
    _report(Command.QUAT, config, out)


# ── figures ──────────────────────────────────────────────────────────


@main.command()
@click.option(
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Directory for the figure artifacts.",
)
@click.option(
    "--workers",
    type=int,
    default=None,
    help="Parallel figure jobs. Default: $RBFRACTAL_WORKERS or 4.",
)
@_guarded
def figures(out: Path, workers: int | None) -> None:
    """Reproduce every figure (CSV and SVG) into --out."""
    from rbfractal.runner import figures as produce, resolve_workers

    count = workers if workers and workers > 0 else None
    if count is None:
        count = resolve_workers(os.environ.get("RBFRACTAL_WORKERS"))
    log = structlog.get_logger()
    log.info("starting_figures", out=str(out), workers=count)
    sys.exit(produce(out, count))


if __name__ == "__main__":
    main()
