"""Local RB operators: coefficient pairs living on subsets ``X_i`` with ``l_i: X_i → X``."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING

import numpy as np
import structlog

from rbfractal.coefficients import CoefficientFn
from rbfractal.errors import (
    DomainError,
    EmptyFamily,
    InconsistentJoinUp,
    SemanticError,
    ShapeMismatch,
    UnsortedData,
)
from rbfractal.expr import BinOp, Var, const
from rbfractal.geometry import AffineMap, Box, as_scalar, fmt_scalar, image_report
from rbfractal.grid import GridFunction, grid_eval
from rbfractal.plan import (
    Piece,
    apply_pieces,
    branch_value,
    coefficient_at,
    compatibility_witnesses,
    value_dim_of,
)
from rbfractal.rb_global import JUNCTION_TOL, banach_iterate, lp_report
from rbfractal.reports import ConditionKind, ConditionReport, Witness

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from rbfractal.geometry import PartitionReport, Scalar
    from rbfractal.rb_global import RBOperator
    from rbfractal.reports import FixedPointResult

log = structlog.get_logger()

# amplitude of the oscillation added to the piecewise-linear test function
_WIGGLE_AMPLITUDE = 0.1


@dataclass(frozen=True)
class LocalRBOperator:
    """``Tf = q_i∘l_i⁻¹ + (s_i∘l_i⁻¹)·(f|_{X_i}∘l_i⁻¹)`` on ``l_i(X_i)``."""

    domain: Box
    pieces: tuple[Piece, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "pieces", tuple(self.pieces))
        if not self.pieces:
            raise EmptyFamily
        for i, piece in enumerate(self.pieces):
            if not _inside(piece.subset, self.domain):
                msg = f"subset X{i + 1} = {piece.subset} is not contained in {self.domain}"
                raise DomainError(msg)
            for name, c in (("q", piece.q), ("s", piece.s)):
                if not _inside(piece.subset, c.domain):
                    msg = f"{name}{i + 1} lives on {c.domain}, not on X{i + 1} = {piece.subset}"
                    raise DomainError(msg)
            if piece.s.value_dim != 1:
                msg = f"s{i + 1} must be real-valued"
                raise ShapeMismatch(msg)

    @classmethod
    def from_global(cls, op: RBOperator) -> LocalRBOperator:
        """The same operator with ``X_i = X`` for every piece."""
        return cls(op.domain, op.pieces)

    @property
    def n(self) -> int:
        return len(self.pieces)

    @property
    def value_dim(self) -> int:
        return value_dim_of(self.pieces)


def _inside(inner: Box, outer: Box) -> bool:
    return inner.dim == outer.dim and all(
        olo <= ilo and ihi <= ohi
        for ilo, ihi, olo, ohi in zip(inner.lo, inner.hi, outer.lo, outer.hi, strict=True)
    )


def verify_local_partition(op: LocalRBOperator) -> PartitionReport:
    """Disjointness and coverage of the images ``l_i(X_i)``.

    The maps need not be contractions here; ``report.contractive`` is informational.
    """
    report = image_report(op.domain, [(p.map, p.subset) for p in op.pieces])
    log.info(
        "local_partition_verified",
        pieces=op.n,
        disjoint=report.disjoint,
        covers=report.covers,
    )
    return report


def apply_local(op: LocalRBOperator, f: GridFunction) -> GridFunction:
    return apply_pieces(op.domain, op.pieces, f, k=op.value_dim)


def local_contraction(op: LocalRBOperator) -> float:
    """``max_i sup_{X_i} |s_i|``."""
    return max(p.s.sup_bound for p in op.pieces)


def local_lp_certificate(op: LocalRBOperator, p: float) -> ConditionReport:
    """``Σ a_i ‖s_i‖^p_{X_i} < 1`` with ``a_i = ‖(l_i⁻¹)′‖``."""
    return lp_report(op.pieces, p)


def iterate_local(
    op: LocalRBOperator, f0: GridFunction, eps: float, k_max: int
) -> FixedPointResult:
    step = functools.partial(apply_local, op)
    return banach_iterate(step, local_contraction(op), f0, eps, k_max)


def check_local_compatibility(
    op: LocalRBOperator, psi: GridFunction, tol: float = JUNCTION_TOL
) -> ConditionReport:
    """Compatibility at points shared by two closed images ``l_i(X_i)``."""
    witnesses = compatibility_witnesses(op.domain, op.pieces, psi)
    return ConditionReport(ConditionKind.COMPATIBILITY, tuple(witnesses), tol)


# ── Even-n construction ──────────────────────────────────────────────


@dataclass(frozen=True)
class EvenNConstruction:
    """Knots ``x_i = i/n`` of ``[0, 1]`` with data ``y_j`` at the even knots ``x_{2j}``.

    ``X_{2j-1} = X_{2j} = [x_{2j-2}, x_{2j}]`` is stored once and shared by both pieces;
    ``l_{2j-1}`` maps it onto ``[x_{2j-2}, x_{2j-1}]`` and ``l_{2j}`` onto ``[x_{2j-1}, x_{2j}]``.
    """

    n: int
    data: tuple[tuple[Fraction, Scalar], ...]
    subsets: tuple[Box, ...]
    maps: tuple[AffineMap, ...]

    @property
    def domain(self) -> Box:
        return Box.interval(0, 1)

    @property
    def knots(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(i, self.n) for i in range(self.n + 1))

    @property
    def contact_points(self) -> tuple[Fraction, ...]:
        """Interior knots, where adjacent images meet."""
        return self.knots[1:-1]

    @property
    def odd_knots(self) -> tuple[Fraction, ...]:
        return self.knots[1::2]


def even_n_construction(data: Sequence[tuple[Scalar | int, Scalar | int]]) -> EvenNConstruction:
    """Subsets and maps for data ``(j/m, y_j)``, ``j = 0..m``, with ``n = 2m`` pieces."""
    if len(data) < 2:
        msg = "the even-n construction needs at least two data points"
        raise SemanticError(msg)
    m = len(data) - 1
    n = 2 * m
    points: list[tuple[Fraction, Scalar]] = []
    for j, (x, y) in enumerate(data):
        xs = as_scalar(x)
        if j and xs <= as_scalar(data[j - 1][0]):
            raise UnsortedData(j)
        expected = Fraction(j, m)
        if not math.isclose(float(xs), float(expected), abs_tol=1e-12):
            msg = f"data point {j} sits at x = {fmt_scalar(xs)}, expected the knot {expected}"
            raise SemanticError(msg)
        points.append((expected, as_scalar(y)))

    subsets: list[Box] = []
    maps: list[AffineMap] = []
    half = Fraction(1, 2)
    for j in range(1, m + 1):
        subset = Box.interval(Fraction(2 * j - 2, n), Fraction(2 * j, n))
        subsets.extend((subset, subset))
        maps.append(AffineMap.line(half, Fraction(j - 1, n)))
        maps.append(AffineMap.line(half, Fraction(j, n)))
    return EvenNConstruction(n, tuple(points), tuple(subsets), tuple(maps))


def build_even_n(
    data: Sequence[tuple[Scalar | int, Scalar | int]],
    scales: Sequence[CoefficientFn],
    *,
    odd_knot_values: Sequence[Scalar | int] | None = None,
) -> LocalRBOperator:
    """Local operator whose continuous fixed point passes through ``data``.

    ``q_i`` is affine on ``X_i`` and fixed by its values at the two ends of ``X_i``:
    the even-knot ends reproduce ``y_j`` and the odd-knot end reproduces the value
    ``J_j`` shared by both pieces of the pair, so the images join up at ``x_{2j-1}``.
    ``J_j`` defaults to the chord midpoint ``(y_{j-1} + y_j)/2``.
    """
    geo = even_n_construction(data)
    if len(scales) == 1:
        scales = list(scales) * geo.n
    if len(scales) != geo.n:
        msg = f"{geo.n} pieces need {geo.n} scale functions, got {len(scales)}"
        raise ShapeMismatch(msg)
    m = geo.n // 2
    if odd_knot_values is None:
        joins: list[Scalar] = [(geo.data[j - 1][1] + geo.data[j][1]) / 2 for j in range(1, m + 1)]
    elif len(odd_knot_values) != m:
        msg = f"{m} odd knots need {m} join values, got {len(odd_knot_values)}"
        raise ShapeMismatch(msg)
    else:
        joins = [as_scalar(v) for v in odd_knot_values]

    pieces: list[Piece] = []
    for j in range(1, m + 1):
        subset = geo.subsets[2 * j - 1]
        lo, hi = subset.lo[0], subset.hi[0]
        (_, y_lo), (_, y_hi) = geo.data[j - 1], geo.data[j]
        join = joins[j - 1]
        s_odd = scales[2 * j - 2].on(subset)
        s_even = scales[2 * j - 1].on(subset)
        sa_lo, sa_hi = _scale_at(s_odd, lo), _scale_at(s_odd, hi)
        sb_lo, sb_hi = _scale_at(s_even, lo), _scale_at(s_even, hi)
        q_odd = _affine_through(subset, (1 - sa_lo) * y_lo, join - sa_hi * y_hi)
        q_even = _affine_through(subset, join - sb_lo * y_lo, (1 - sb_hi) * y_hi)
        pieces.append(Piece(subset, geo.maps[2 * j - 2], q_odd, s_odd))
        pieces.append(Piece(subset, geo.maps[2 * j - 1], q_even, s_even))

    op = LocalRBOperator(geo.domain, tuple(pieces))
    report = verify_even_n(op, geo.data)
    if not report.verdict:
        worst = report.worst
        raise InconsistentJoinUp(report.max_gap, worst.location if worst else "")
    log.info("even_n_built", n=geo.n, data_points=m + 1)
    return op


def _scale_at(s: CoefficientFn, x: Scalar) -> Scalar:
    exact = s.exact_constant
    if exact is not None:
        return exact
    return float(coefficient_at(s, (x,))[0])


def _affine_through(subset: Box, at_lo: Scalar, at_hi: Scalar) -> CoefficientFn:
    """The affine function on ``subset`` taking the given values at its ends."""
    lo, hi = subset.lo[0], subset.hi[0]
    slope = (at_hi - at_lo) / (hi - lo)
    intercept = at_lo - slope * lo
    body = BinOp("+", BinOp("*", const(slope), Var()), const(intercept))
    return CoefficientFn(body, subset, source=f"{fmt_scalar(slope)}*x + {fmt_scalar(intercept)}")


def verify_even_n(
    op: LocalRBOperator,
    data: Sequence[tuple[Scalar | int, Scalar | int]],
    tol: float = JUNCTION_TOL,
) -> ConditionReport:
    """Interpolation and odd-knot join-up conditions of an even-n operator.

    Besides the endpoint equations, a test function ``f`` through the data is pushed
    through ``T`` and ``Tf`` must pass through the data as well.
    """
    geo = even_n_construction(data)
    if op.n != geo.n:
        msg = f"operator has {op.n} pieces, the data needs {geo.n}"
        raise ShapeMismatch(msg)
    ys = [y for _, y in geo.data]
    witnesses: list[Witness] = []
    for j in range(1, geo.n // 2 + 1):
        odd, even = op.pieces[2 * j - 2], op.pieces[2 * j - 1]
        lo, hi = geo.knots[2 * j - 2], geo.knots[2 * j]
        y_lo, y_hi = _vec(ys[j - 1]), _vec(ys[j])
        left_end = branch_value(odd, (lo,), y_lo)
        right_end = branch_value(even, (hi,), y_hi)
        witnesses.append(_witness(f"psi(x{2 * j - 2}) = y{j - 1}", left_end, y_lo, lo))
        witnesses.append(_witness(f"psi(x{2 * j}) = y{j}", right_end, y_hi, hi))
        from_left = branch_value(odd, (hi,), y_hi)
        from_right = branch_value(even, (lo,), y_lo)
        witnesses.append(
            _witness(f"join-up at x{2 * j - 1}", from_left, from_right, geo.knots[2 * j - 1])
        )

    resolution = 2 * geo.n + 1
    f = GridFunction.from_fn(op.domain, resolution, functools.partial(_through_data, geo))
    image = apply_local(op, f)
    for j, (x, y) in enumerate(geo.data):
        value = _vec(grid_eval(image, x))
        witnesses.append(_witness(f"(T f)(x{2 * j}) = y{j}", value, _vec(y), x))

    report = ConditionReport(ConditionKind.JOIN_UP, tuple(witnesses), tol)
    log.info("even_n_verified", n=geo.n, verdict=report.verdict, max_gap=report.max_gap)
    return report


def _through_data(geo: EvenNConstruction, nodes: NDArray[np.float64]) -> NDArray[np.float64]:
    """Piecewise-linear interpolant of the data plus a wave vanishing at every data point."""
    x = nodes[:, 0]
    xs = np.array([float(p) for p, _ in geo.data])
    ys = np.array([float(y) for _, y in geo.data])
    m = geo.n // 2
    return np.interp(x, xs, ys) + _WIGGLE_AMPLITUDE * np.sin(np.pi * m * x)


def _vec(value: Scalar | tuple[float, ...]) -> NDArray[np.float64]:
    if isinstance(value, tuple):
        return np.array(value, dtype=np.float64)
    return np.array([float(value)])


def _witness(
    location: str, lhs: NDArray[np.float64], rhs: NDArray[np.float64], point: Scalar
) -> Witness:
    return Witness(
        location,
        float(lhs[0]),
        float(rhs[0]),
        float(np.abs(lhs - rhs).max()),
        (float(point),),
    )
