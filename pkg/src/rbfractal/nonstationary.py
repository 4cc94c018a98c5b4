"""Sequences of RB operators ``{T_k}`` and their trajectories.

A schedule is a deterministic generator ``k ↦ T_k``.  Uniform constants are
certified over ``min(horizon, period)`` operators: a schedule with a declared
period repeats itself, anything else is trusted beyond its horizon.
"""

from __future__ import annotations

import functools
import math
import threading
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np
import structlog

from rbfractal.coefficients import CoefficientFn
from rbfractal.errors import (
    DomainError,
    EndpointMismatch,
    NotContractive,
    OutsideInvariantBall,
    ScaleTooLarge,
    SemanticError,
    ShapeMismatch,
    UnknownName,
)
from rbfractal.expr import BinOp, Var, affine_coefficients, const, substitute
from rbfractal.geometry import Box, Partition, dyadic_maps, verify_partition
from rbfractal.grid import GridFunction, grid_eval, sup_norm
from rbfractal.plan import coefficient_at
from rbfractal.rb_global import CONTRACTION_GUARD, RBOperator, apply, contraction_factor
from rbfractal.reports import ConditionKind, ConditionReport, Witness

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from rbfractal.geometry import AffineMap, Scalar

log = structlog.get_logger()

DEFAULT_HORIZON = 200

# T_k is the first operator for the first half of every block of BLOCK steps
BLOCK = 10


class Direction(StrEnum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class OperatorSchedule:
    """``T_1, T_2, …`` generated on demand.

    Generated operators are memoised behind a lock, so one schedule can be
    shared by the figure worker threads.
    """

    generator: Callable[[int], RBOperator]
    horizon: int = DEFAULT_HORIZON
    period: int | None = None
    name: str = ""
    initial: CoefficientFn | None = None
    _cache: dict[int, RBOperator] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )
    _lock: threading.RLock = field(
        default_factory=threading.RLock, init=False, repr=False, compare=False
    )

    def operator(self, k: int) -> RBOperator:
        """``T_k`` for ``k >= 1``, generated once and memoised."""
        if k < 1:
            msg = f"schedules start at k = 1, got {k}"
            raise DomainError(msg)
        with self._lock:
            if k not in self._cache:
                self._cache[k] = self.generator(k)
            return self._cache[k]

    @property
    def span(self) -> int:
        return min(self.horizon, self.period) if self.period else self.horizon

    @functools.cached_property
    def uniform_s(self) -> float:
        """``sup_k max_i ‖s_{i,k}‖`` over the certified span."""
        return max(contraction_factor(self.operator(k)) for k in range(1, self.span + 1))

    @functools.cached_property
    def uniform_m(self) -> float:
        """``sup_k max_i ‖q_{i,k}‖`` over the certified span."""
        return max(
            c.sup_bound for k in range(1, self.span + 1) for c in self.operator(k).q
        )

    @property
    def invariant_radius(self) -> float:
        return invariant_ball_radius(self.uniform_m, self.uniform_s)

    def initial_grid(self, resolution: int) -> GridFunction:
        """``f_0`` on the grid: the schedule's own choice, zero if it has none."""
        domain = self.operator(1).domain
        if self.initial is None:
            return GridFunction.constant(domain, resolution)
        return GridFunction.from_coefficient(self.initial.on(domain), resolution)


def invariant_ball_radius(m: float, s: float) -> float:
    """Radius ``M/(1-s)`` of the ball ``B_r(0)`` mapped into itself by every ``T_k``."""
    if s >= 1 - CONTRACTION_GUARD:
        raise NotContractive(s, CONTRACTION_GUARD)
    if m < 0 or s < 0:
        msg = f"M and s must be non-negative, got M={m}, s={s}"
        raise DomainError(msg)
    return m / (1 - s)


def summability_check(schedule: OperatorSchedule, k_max: int) -> ConditionReport:
    """``∏_{j≤k} Lip(T_j) ≤ s^k`` for ``k ≤ k_max``; ``measure`` is the tail ``s/(1-s)``."""
    s = schedule.uniform_s
    witnesses: list[Witness] = []
    product = 1.0
    for k in range(1, k_max + 1):
        product *= contraction_factor(schedule.operator(k))
        bound = s**k
        witnesses.append(
            Witness(f"k = {k}", product, bound, max(0.0, product - bound * (1 + 1e-12)))
        )
    contractive = s < 1 - CONTRACTION_GUARD
    witnesses.append(
        Witness("uniform contraction s < 1", s, 1.0, 0.0 if contractive else math.inf)
    )
    tail = s / (1 - s) if contractive else math.inf
    report = ConditionReport(ConditionKind.SUMMABILITY, tuple(witnesses), 0.0, measure=tail)
    log.info("summability_checked", schedule=schedule.name, s=s, tail=tail, verdict=report.verdict)
    return report


# ── Trajectories ─────────────────────────────────────────────────────


@dataclass(frozen=True)
class TrajectoryResult:
    psi: GridFunction
    depth: int
    direction: Direction
    tail_bound: float


def _check_ball(schedule: OperatorSchedule, f0: GridFunction, *, strict: bool) -> float:
    radius = schedule.invariant_radius
    norm = sup_norm(f0)
    if norm > radius:
        if strict:
            raise OutsideInvariantBall(norm, radius)
        log.warning("outside_invariant_ball", schedule=schedule.name, norm=norm, radius=radius)
    return radius


def backward_trajectory(
    schedule: OperatorSchedule, f0: GridFunction, k: int, *, strict: bool = False
) -> TrajectoryResult:
    """``Ψ_k(f_0) = T_1∘T_2∘⋯∘T_k(f_0)``: ``T_k`` is applied first."""
    if k < 1:
        msg = f"depth must be at least 1, got {k}"
        raise DomainError(msg)
    radius = _check_ball(schedule, f0, strict=strict)
    psi = f0
    for j in range(k, 0, -1):
        psi = apply(schedule.operator(j), psi)
    tail = schedule.uniform_s**k * 2 * radius
    log.info("backward_trajectory", schedule=schedule.name, depth=k, tail_bound=tail)
    return TrajectoryResult(psi, k, Direction.BACKWARD, tail)


def forward_trajectory(
    schedule: OperatorSchedule, f0: GridFunction, k: int, *, strict: bool = False
) -> TrajectoryResult:
    """``Φ_k(f_0) = T_k∘⋯∘T_1(f_0)``; no convergence certificate, so ``tail_bound`` is inf."""
    if k < 1:
        msg = f"depth must be at least 1, got {k}"
        raise DomainError(msg)
    _check_ball(schedule, f0, strict=strict)
    psi = f0
    for j in range(1, k + 1):
        psi = apply(schedule.operator(j), psi)
    log.info("forward_trajectory", schedule=schedule.name, depth=k)
    return TrajectoryResult(psi, k, Direction.FORWARD, math.inf)


# ── Non-stationary interpolation ─────────────────────────────────────


@dataclass(frozen=True)
class InterpolatingSchedule:
    """``T_k g = f + Σ_i (s_{i,k}·(g - b))∘l_{i,k}⁻¹`` on each image.

    ``levels[k-1]`` and ``scales[k-1]`` describe ``T_k``; both are cycled when
    ``k`` exceeds the number of levels.
    """

    f: CoefficientFn
    levels: tuple[tuple[AffineMap, ...], ...]
    scales: tuple[tuple[CoefficientFn, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "levels", tuple(tuple(lv) for lv in self.levels))
        object.__setattr__(self, "scales", tuple(tuple(sc) for sc in self.scales))
        if not self.levels or len(self.levels) != len(self.scales):
            msg = f"{len(self.levels)} levels need as many scale lists, got {len(self.scales)}"
            raise ShapeMismatch(msg)
        for k, (maps, scales) in enumerate(zip(self.levels, self.scales, strict=True), 1):
            if len(maps) != len(scales):
                msg = f"level {k}: {len(maps)} maps but {len(scales)} scale functions"
                raise ShapeMismatch(msg)

    @property
    def domain(self) -> Box:
        return Box.interval(0, 1)

    @functools.cached_property
    def chord(self) -> CoefficientFn:
        """``b(x) = (f(1) - f(0))x + f(0)``."""
        f0, f1 = self.endpoint_values
        body = BinOp("+", BinOp("*", const(f1 - f0), Var()), const(f0))
        return CoefficientFn(body, self.domain, source=f"chord of {self.f}")

    @functools.cached_property
    def endpoint_values(self) -> tuple[Scalar, Scalar]:
        return _value_at(self.f, 0), _value_at(self.f, 1)

    def level(self, k: int) -> int:
        return (k - 1) % len(self.levels)

    def nodes(self, k: int) -> list[tuple[Scalar, float]]:
        """``P_k``: the knots ``x_{i,k}`` of level ``k`` with the values of ``f``."""
        maps = self.levels[self.level(k)]
        xs = sorted({m((0,))[0] for m in maps} | {m((1,))[0] for m in maps})
        return [(x, float(_value_at(self.f, x))) for x in xs]

    @property
    def uniform_s(self) -> float:
        return max(c.on(self.domain).sup_bound for level in self.scales for c in level)

    @property
    def invariant_radius(self) -> float:
        """``(‖f‖ + s‖b‖)/(1 - s)``."""
        s = self.uniform_s
        if s >= 1 - CONTRACTION_GUARD:
            raise NotContractive(s, CONTRACTION_GUARD)
        f_norm = self.f.on(self.domain).sup_bound
        return (f_norm + s * self.chord.sup_bound) / (1 - s)


def _value_at(c: CoefficientFn, x: Scalar | int) -> Scalar:
    """Exact for affine ``c`` at rational ``x``."""
    try:
        a, b = affine_coefficients(c.body)
    except SemanticError:
        return float(coefficient_at(c, (x,))[0])
    return a * x + b


def build_interpolating_schedule(spec: InterpolatingSchedule) -> OperatorSchedule:
    """Operators with ``q_{i,k} = f∘l_{i,k} - s_{i,k}·b``; each ``T_k g`` interpolates ``P_k``."""
    domain = spec.domain
    b = spec.chord
    operators: list[RBOperator] = []
    for k, (maps, scales) in enumerate(zip(spec.levels, spec.scales, strict=True), 1):
        first, last = maps[0]((0,))[0], maps[-1]((1,))[0]
        if first != 0:
            raise EndpointMismatch(k, 0.0, float(first))
        if last != 1:
            raise EndpointMismatch(k, 1.0, float(last))
        report = verify_partition(maps, domain)
        if not report.ok:
            msg = f"level {k}: the maps do not partition {domain}"
            raise DomainError(msg)
        qs: list[CoefficientFn] = []
        ss: list[CoefficientFn] = []
        for i, (m, s) in enumerate(zip(maps, scales, strict=True)):
            s_dom = s.on(domain)
            if s_dom.sup_bound >= 1:
                raise ScaleTooLarge(i, s_dom.sup_bound)
            body = BinOp("-", substitute(spec.f.body, m), BinOp("*", s_dom.body, b.body))
            qs.append(CoefficientFn(body, domain, source=f"f(l{i + 1}) - s{i + 1}*b"))
            ss.append(s_dom)
        operators.append(RBOperator(Partition(domain, maps), tuple(qs), tuple(ss)))

    log.info("interpolating_schedule_built", levels=len(operators), f=str(spec.f))
    return OperatorSchedule(
        lambda k: operators[spec.level(k)],
        period=len(operators),
        name="interpolating",
        initial=b,
    )


def check_interpolation(
    psi: GridFunction, nodes: Sequence[tuple[Scalar, float]], tol: float
) -> ConditionReport:
    """``|ψ(x) - y| ≤ tol`` at every node."""
    witnesses = []
    for x, y in nodes:
        value = float(np.atleast_1d(grid_eval(psi, x))[0])
        witnesses.append(Witness(f"x = {x}", value, y, abs(value - y), (float(x),)))
    report = ConditionReport(ConditionKind.INTERPOLATION, tuple(witnesses), tol)
    log.info("interpolation_checked", nodes=len(witnesses), verdict=report.verdict)
    return report


# ── Built-in operators ───────────────────────────────────────────────

_UNIT = Box.interval(0, 1)

# (pieces, q_i, s_i) with maps x/pieces + (i-1)/pieces
_BUILTIN_OPERATORS: dict[str, tuple[int, tuple[str, ...], tuple[str, ...]]] = {
    "takagi": (2, ("x", "1 - x"), ("1/2", "1/2")),
    "parabola": (2, ("x", "1 - x"), ("1/4", "1/4")),
    "kiesswetter": (4, ("0", "-1/2", "0", "1/2"), ("-1/2", "1/2", "1/2", "1/2")),
    "casino": (2, ("0", "3/4"), ("3/4", "1/4")),
}

# (first operator, second operator, f_0)
_BUILTIN_SCHEDULES: dict[str, tuple[str, str, str]] = {
    "takagi_parabola": ("takagi", "parabola", "0"),
    "kiesswetter_casino": ("kiesswetter", "casino", "x"),
}


def builtin_operator(name: str) -> RBOperator:
    try:
        pieces, qs, ss = _BUILTIN_OPERATORS[name]
    except KeyError:
        raise UnknownName(name, _BUILTIN_OPERATORS) from None
    return RBOperator(
        Partition(_UNIT, dyadic_maps(pieces)),
        tuple(CoefficientFn.parse(q, _UNIT) for q in qs),
        tuple(CoefficientFn.parse(s, _UNIT) for s in ss),
    )


def block_choice(k: int) -> int:
    """0 for ``10(j-1) < k ≤ 10j-5``, 1 for ``10j-5 < k ≤ 10j``."""
    return 0 if (k - 1) % BLOCK < BLOCK // 2 else 1


def builtin_schedule(name: str) -> OperatorSchedule:
    try:
        first, second, initial = _BUILTIN_SCHEDULES[name]
    except KeyError:
        raise UnknownName(name, _BUILTIN_SCHEDULES) from None
    pair = (builtin_operator(first), builtin_operator(second))
    return OperatorSchedule(
        lambda k: pair[block_choice(k)],
        period=BLOCK,
        name=name,
        initial=CoefficientFn.parse(initial, _UNIT),
    )


def builtin_names() -> tuple[list[str], list[str]]:
    return sorted(_BUILTIN_OPERATORS), sorted(_BUILTIN_SCHEDULES)
