"""Orchestration: config → operator → certificates → artifacts."""

from __future__ import annotations

import asyncio
import functools
import time
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np
import structlog

from rbfractal.coefficients import certify_sup_bound
from rbfractal.config import Mode, ProblemConfig, load_config
from rbfractal.errors import NotContractive, RBError, SemanticError
from rbfractal.export import export_csv, export_svg, grid_table, projection_table
from rbfractal.geometry import Partition, fmt_scalar
from rbfractal.grid import GridFunction, sup_distance
from rbfractal.nonstationary import (
    backward_trajectory,
    build_interpolating_schedule,
    builtin_schedule,
    check_interpolation,
    forward_trajectory,
    summability_check,
)
from rbfractal.plan import Piece
from rbfractal.quat_operator import (
    QuatRBOperator,
    component_projection,
    quat_apply,
    quat_boundary_values,
    quat_contraction,
    quat_fixed_point,
)
from rbfractal.rb_global import (
    CONTRACTION_GUARD,
    RBOperator,
    apply,
    boundary_values,
    build_fif,
    check_compatibility,
    check_continuity,
    contraction_factor,
    interpolation_errors,
    iterate_to_fixed_point,
    lp_certificate,
)
from rbfractal.rb_local import (
    LocalRBOperator,
    apply_local,
    build_even_n,
    iterate_local,
    local_contraction,
    local_lp_certificate,
    verify_even_n,
    verify_local_partition,
)

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence
    from pathlib import Path

    from numpy.typing import NDArray

    from rbfractal.geometry import Box
    from rbfractal.nonstationary import OperatorSchedule
    from rbfractal.quat_operator import Axis
    from rbfractal.reports import ConditionReport, FixedPointResult

log = structlog.get_logger()

SAMPLE_TRIALS = 8
SAMPLE_RESOLUTION = 257
INTERPOLATION_TOL = 1e-6

DEFAULT_PROJECTIONS: tuple[tuple[Axis, ...], ...] = (
    ("x", 0),
    ("x", 1),
    ("x", 2),
    ("x", 3),
    (0, 1, 2),
    (0, 2, 3),
)

type Operator = RBOperator | LocalRBOperator | QuatRBOperator


class Command(StrEnum):
    CHECK = "check"
    SOLVE = "solve"
    TRAJECTORY = "trajectory"
    QUAT = "quat"


# ── Data types ───────────────────────────────────────────────────────


@dataclass(frozen=True)
class Table:
    name: str
    header: list[str]
    rows: NDArray[np.float64]


@dataclass(frozen=True)
class Plot:
    name: str
    series: NDArray[np.float64]
    title: str = ""


type Artifact = Table | Plot


@dataclass
class Outcome:
    """Summary lines and pending artifacts of one pipeline."""

    lines: list[str] = field(default_factory=list)
    artifacts: list[Artifact] = field(default_factory=list)
    ok: bool = True

    def say(self, text: str) -> None:
        self.lines.append(text)

    def gate(self, report: ConditionReport) -> None:
        self.say(report.summary())
        if not report.verdict:
            self.ok = False
            log.warning("condition_failed", kind=str(report.kind), max_gap=report.max_gap)


@dataclass
class FiguresSummary:
    total: int = 0
    produced: int = 0
    failed: int = 0
    _lock: asyncio.Lock = field(default_factory=asyncio.Lock, repr=False)

    async def inc_produced(self) -> None:
        async with self._lock:
            self.produced += 1

    async def inc_failed(self) -> None:
        async with self._lock:
            self.failed += 1


# ── Building operators ───────────────────────────────────────────────


def build_operator(config: ProblemConfig) -> Operator:
    """The operator a global, local or quaternion config describes."""
    if config.mode is Mode.GLOBAL:
        if config.fif is not None:
            n = len(config.fif.points) - 1
            scales = config.fif.scales * n if len(config.fif.scales) == 1 else config.fif.scales
            return build_fif(config.fif.points, scales)
        return RBOperator(Partition(config.domain, config.maps), config.q, config.s)
    if config.mode is Mode.LOCAL:
        if config.even_n is not None:
            return build_even_n(
                config.even_n.points, config.even_n.scales, odd_knot_values=config.even_n.joins
            )
        pieces = tuple(
            Piece(subset, m, q, s)
            for subset, m, q, s in zip(config.subsets, config.maps, config.q, config.s, strict=True)
        )
        return LocalRBOperator(config.domain, pieces)
    if config.mode is Mode.QUATERNION:
        partition = Partition(config.domain, config.maps)
        return QuatRBOperator(partition, config.q, config.s, config.side)
    msg = f"{config.mode} problems describe a schedule, not a single operator"
    raise SemanticError(msg)


def build_schedule(config: ProblemConfig) -> OperatorSchedule:
    spec = config.schedule
    if config.mode is not Mode.NONSTATIONARY or spec is None:
        msg = f"{config.name} is a {config.mode} problem; trajectories need a [schedule]"
        raise SemanticError(msg)
    if spec.builtin is not None:
        return builtin_schedule(spec.builtin)
    if spec.interpolating is None:
        msg = f"{config.name}: [schedule] names neither a builtin nor interpolating levels"
        raise SemanticError(msg)
    return build_interpolating_schedule(spec.interpolating)


def _step(op: Operator) -> Callable[[GridFunction], GridFunction]:
    if isinstance(op, QuatRBOperator):
        return functools.partial(quat_apply, op)
    if isinstance(op, LocalRBOperator):
        return functools.partial(apply_local, op)
    return functools.partial(apply, op)


def _contraction(op: Operator) -> float:
    if isinstance(op, QuatRBOperator):
        return quat_contraction(op)
    if isinstance(op, LocalRBOperator):
        return local_contraction(op)
    return contraction_factor(op)


def _value_dim(op: Operator) -> int:
    return 4 if isinstance(op, QuatRBOperator) else op.value_dim


def observed_contraction(
    step: Callable[[GridFunction], GridFunction],
    domain: Box,
    value_dim: int,
    resolution: int,
    seed: int,
    trials: int = SAMPLE_TRIALS,
) -> float:
    """Worst observed ``‖Tf - Tg‖/‖f - g‖`` over random grid pairs."""
    rng = np.random.default_rng(seed)
    size = resolution**domain.dim
    worst = 0.0
    for _ in range(trials):
        f = GridFunction(domain, resolution, rng.uniform(-1, 1, (size, value_dim)))
        g = GridFunction(domain, resolution, rng.uniform(-1, 1, (size, value_dim)))
        d = sup_distance(f, g)
        if d > 0:
            worst = max(worst, sup_distance(step(f), step(g)) / d)
    log.debug("observed_contraction", trials=trials, worst=worst, seed=seed)
    return worst


def _fmt_value(value: float | tuple[float, ...]) -> str:
    if isinstance(value, tuple):
        return "(" + ", ".join(f"{v:.12g}" for v in value) + ")"
    return f"{value:.12g}"


def _lp_lines(outcome: Outcome, reports: Sequence[tuple[float, ConditionReport]]) -> None:
    for p, report in reports:
        status = "certified" if report.verdict else "not certified"
        outcome.say(f"lp(p={p:g}): {status} measure={report.measure:.12g}")


# ── Pipelines ────────────────────────────────────────────────────────


def run_check(config: ProblemConfig) -> Outcome:
    """Certificates that need no fixed point."""
    out = Outcome()
    if config.mode is Mode.NONSTATIONARY:
        schedule = build_schedule(config)
        report = summability_check(schedule, config.solver.depth)
        out.gate(report)
        out.say(f"uniform s: {schedule.uniform_s:.12g}")
        spec = config.schedule.interpolating if config.schedule else None
        radius = spec.invariant_radius if spec is not None else schedule.invariant_radius
        out.say(f"invariant ball radius: {radius:.12g}")
        return out

    op = build_operator(config)
    if isinstance(op, LocalRBOperator):
        partition = verify_local_partition(op)
    else:
        partition = op.partition.report
    out.say(
        f"partition: disjoint={partition.disjoint} covers={partition.covers} "
        f"images={', '.join(str(b) for b in partition.sorted_images)}"
    )
    if isinstance(op, LocalRBOperator):
        for i, piece in enumerate(op.pieces, 1):
            out.say(f"sup |s{i}| <= {certify_sup_bound(piece.s, config.solver.n_samples):.12g}")
    else:
        for i, c in enumerate(op.s, 1):
            out.say(f"sup |s{i}| <= {certify_sup_bound(c, config.solver.n_samples):.12g}")

    s = _contraction(op)
    resolution = min(config.resolution, SAMPLE_RESOLUTION)
    observed = observed_contraction(
        _step(op), op.domain, _value_dim(op), resolution, config.solver.seed
    )
    out.say(f"contraction factor: {s:.12g} (observed {observed:.6g})")
    if s >= 1 - CONTRACTION_GUARD:
        raise NotContractive(s, CONTRACTION_GUARD)

    if isinstance(op, RBOperator):
        if op.domain.dim == 1:
            for x, v in boundary_values(op):
                out.say(f"psi({fmt_scalar(x)}) = {_fmt_value(v)}")
        if op.domain.dim == 1 and op.domain.closed[0]:
            out.gate(check_continuity(op))
        _lp_lines(out, [(p, lp_certificate(op, p)) for p in config.lp])
    elif isinstance(op, LocalRBOperator):
        if config.even_n is not None:
            out.gate(verify_even_n(op, config.even_n.points))
        _lp_lines(out, [(p, local_lp_certificate(op, p)) for p in config.lp])
    elif op.domain.dim == 1:
        for x, qv in quat_boundary_values(op):
            out.say(f"psi({fmt_scalar(x)}) = {qv}")
    return out


def _fixed_point(op: Operator, config: ProblemConfig) -> FixedPointResult:
    f0 = GridFunction.constant(op.domain, config.resolution, [0.0] * _value_dim(op))
    eps, k_max = config.solver.eps, config.solver.k_max
    if isinstance(op, QuatRBOperator):
        return quat_fixed_point(op, f0, eps, k_max)
    if isinstance(op, LocalRBOperator):
        return iterate_local(op, f0, eps, k_max)
    return iterate_to_fixed_point(op, f0, eps, k_max)


def _fixed_point_lines(out: Outcome, result: FixedPointResult) -> None:
    out.say(f"contraction factor: {result.contraction_s:.12g}")
    out.say(f"iterations: {result.iterations}")
    out.say(f"a-priori bound: {result.apriori_bound:.6e}")
    out.say(f"residual: {result.residual:.6e}")


def _graph(psi: GridFunction, name: str, config: ProblemConfig) -> list[Artifact]:
    header, rows = grid_table(psi)
    artifacts: list[Artifact] = [Table(config.export.csv or f"{name}.csv", header, rows)]
    if config.export.svg and psi.domain.dim == 1:
        series = np.column_stack([psi.nodes[:, 0], psi.values[:, 0]])
        artifacts.append(Plot(config.export.svg, series, config.name))
    return artifacts


def run_solve(config: ProblemConfig) -> Outcome:
    """Fixed point of a global or local operator and its certificates."""
    if config.mode is Mode.NONSTATIONARY:
        return run_trajectory(config)
    if config.mode is Mode.QUATERNION:
        return run_quat(config)
    out = Outcome()
    op = build_operator(config)
    result = _fixed_point(op, config)
    _fixed_point_lines(out, result)
    psi = result.psi

    if isinstance(op, RBOperator):
        if not op.partition.report.disjoint:
            out.gate(check_compatibility(op, psi))
        if op.domain.dim == 1:
            for x, v in boundary_values(op):
                out.say(f"psi({fmt_scalar(x)}) = {_fmt_value(v)}")
            if op.domain.closed[0]:
                out.gate(check_continuity(op))
        if config.fif is not None:
            errors = interpolation_errors(psi, config.fif.points)
            out.say(f"interpolation error: {max(errors):.3e}")
        _lp_lines(out, [(p, lp_certificate(op, p)) for p in config.lp])
    elif isinstance(op, LocalRBOperator):
        if config.even_n is not None:
            out.gate(verify_even_n(op, config.even_n.points))
            errors = interpolation_errors(psi, config.even_n.points)
            out.say(f"interpolation error: {max(errors):.3e}")
        _lp_lines(out, [(p, local_lp_certificate(op, p)) for p in config.lp])

    out.artifacts.extend(_graph(psi, config.name, config))
    return out


def run_trajectory(config: ProblemConfig, *, forward: bool = False) -> Outcome:
    """``Ψ_depth(f_0)`` of a schedule, or ``Φ_depth(f_0)`` with ``forward``."""
    out = Outcome()
    schedule = build_schedule(config)
    f0 = schedule.initial_grid(config.resolution)
    depth = config.solver.depth
    if forward:
        result = forward_trajectory(schedule, f0, depth)
    else:
        result = backward_trajectory(schedule, f0, depth)
    out.say(f"schedule: {schedule.name} ({result.direction}, depth {result.depth})")
    out.say(f"uniform s: {schedule.uniform_s:.12g}")
    out.say(f"tail bound: {result.tail_bound:.6e}")
    spec = config.schedule.interpolating if config.schedule else None
    if spec is not None and not forward:
        out.gate(check_interpolation(result.psi, spec.nodes(1), INTERPOLATION_TOL))
    out.artifacts.extend(_graph(result.psi, config.name, config))
    return out


def _quat_operator(config: ProblemConfig) -> QuatRBOperator:
    op = build_operator(config) if config.mode is Mode.QUATERNION else None
    if not isinstance(op, QuatRBOperator):
        msg = f"{config.name} is a {config.mode} problem, not a quaternion one"
        raise SemanticError(msg)
    return op


def run_quat(config: ProblemConfig) -> Outcome:
    """Quaternionic fixed point with its graph projections."""
    op = _quat_operator(config)
    out = Outcome()
    result = _fixed_point(op, config)
    out.say(f"side: {op.side}")
    _fixed_point_lines(out, result)
    psi = result.psi
    if op.domain.dim == 1:
        for x, qv in quat_boundary_values(op):
            out.say(f"psi({fmt_scalar(x)}) = {qv}")
    out.artifacts.extend(_graph(psi, config.name, config))

    projections = config.export.projections
    if not projections and op.domain.dim == 1:
        projections = DEFAULT_PROJECTIONS
    for axes in projections:
        header, rows = projection_table(component_projection(psi, axes), axes)
        tag = "".join(str(a) for a in axes)
        out.artifacts.append(Table(f"{config.name}_{tag}.csv", header, rows))
    return out


PIPELINES: dict[Command, Callable[[ProblemConfig], Outcome]] = {
    Command.CHECK: run_check,
    Command.SOLVE: run_solve,
    Command.TRAJECTORY: run_trajectory,
    Command.QUAT: run_quat,
}


# ── Writing ──────────────────────────────────────────────────────────


def write_artifacts(artifacts: Sequence[Artifact], out_dir: Path) -> list[Path]:
    """Write in name order, one file at a time."""
    written = []
    for artifact in sorted(artifacts, key=lambda a: a.name):
        path = out_dir / artifact.name
        if isinstance(artifact, Table):
            written.append(export_csv(artifact.header, artifact.rows, path))
        else:
            written.append(export_svg(artifact.series, path, title=artifact.title))
    return written


@dataclass(frozen=True)
class RunReport:
    exit_code: int
    lines: list[str]
    paths: list[Path]


def run(
    config: ProblemConfig,
    out_dir: Path,
    command: Command = Command.SOLVE,
    *,
    forward: bool = False,
) -> RunReport:
    """Run one pipeline and write its artifacts; a failed condition gives exit code 1."""
    log.info("run_started", problem=config.name, mode=str(config.mode), command=str(command))
    pipeline = PIPELINES[command]
    if command is Command.TRAJECTORY:
        pipeline = functools.partial(run_trajectory, forward=forward)
    outcome = pipeline(config)
    paths = write_artifacts(outcome.artifacts, out_dir)
    code = 0 if outcome.ok else 1
    log.info("run_complete", problem=config.name, exit_code=code, artifacts=len(paths))
    return RunReport(code, outcome.lines, paths)


# ── Figures ──────────────────────────────────────────────────────────


def _fig_graph(config_name: str, stem: str) -> list[Artifact]:
    config = load_config(config_name)
    if config.mode is Mode.NONSTATIONARY:
        outcome = run_trajectory(config)
    else:
        outcome = run_solve(config)
    table = next(a for a in outcome.artifacts if isinstance(a, Table))
    series = np.column_stack([table.rows[:, 0], table.rows[:, 1]])
    return [
        Table(f"{stem}.csv", table.header, table.rows),
        Plot(f"{stem}.svg", series, config.name),
    ]


def _fig_quaternion() -> list[Artifact]:
    config = load_config("quaternion")
    op = _quat_operator(config)
    psi = _fixed_point(op, config).psi
    header, rows = grid_table(psi)
    axes: tuple[Axis, ...] = (0, 1, 2)
    p_header, p_rows = projection_table(component_projection(psi, axes), axes)
    return [Table("fig5.csv", header, rows), Table("fig6.csv", p_header, p_rows)]


FIGURE_JOBS: dict[str, Callable[[], list[Artifact]]] = {
    "fig1": functools.partial(_fig_graph, "example1", "fig1"),
    "fig2": functools.partial(_fig_graph, "continuous", "fig2"),
    "fig3": functools.partial(_fig_graph, "takagi_parabola", "fig3"),
    "fig4": functools.partial(_fig_graph, "kiesswetter_casino", "fig4"),
    "fig5": _fig_quaternion,
}


async def produce_figures(out_dir: Path, workers: int) -> tuple[FiguresSummary, list[Path]]:
    """Compute every figure on a bounded worker pool, then write them in name order."""
    summary = FiguresSummary(total=len(FIGURE_JOBS))
    queue: asyncio.Queue[str] = asyncio.Queue()
    for name in FIGURE_JOBS:
        queue.put_nowait(name)
    results: dict[str, list[Artifact]] = {}

    async def _worker() -> None:
        while not queue.empty():
            try:
                name = queue.get_nowait()
            except asyncio.QueueEmpty:
                break
            started = time.monotonic()
            try:
                results[name] = await asyncio.to_thread(FIGURE_JOBS[name])
            except RBError as exc:
                log.error("figure_failed", figure=name, error=str(exc))
                await summary.inc_failed()
            else:
                seconds = round(time.monotonic() - started, 3)
                log.info("figure_computed", figure=name, seconds=seconds)
                await summary.inc_produced()
            queue.task_done()

    await asyncio.gather(*(asyncio.create_task(_worker()) for _ in range(max(1, workers))))

    artifacts = [a for name in sorted(results) for a in results[name]]
    paths = write_artifacts(artifacts, out_dir)
    log.info(
        "figures_complete",
        total=summary.total,
        produced=summary.produced,
        failed=summary.failed,
        artifacts=len(paths),
    )
    return summary, paths


def figures(out_dir: Path, workers: int) -> int:
    """Exit code of the ``figures`` command."""
    summary, _ = asyncio.run(produce_figures(out_dir, workers))
    return 0 if summary.failed == 0 else 1


def resolve_workers(value: str | None, default: int = 4) -> int:
    """Worker count from ``RBFRACTAL_WORKERS``-style text; blank or invalid gives ``default``."""
    try:
        workers = int((value or "").strip())
    except ValueError:
        return default
    return workers if workers > 0 else default
