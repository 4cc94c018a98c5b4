"""Global Read-Bajractarević operators ``Tf = q_i∘l_i⁻¹ + (s_i∘l_i⁻¹)·(f∘l_i⁻¹)``."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import structlog

from rbfractal.coefficients import CoefficientFn
from rbfractal.errors import (
    DomainError,
    MaxIterations,
    NotContractive,
    ScaleTooLarge,
    ShapeMismatch,
    UnsortedData,
)
from rbfractal.expr import BinOp, Var, const
from rbfractal.geometry import AffineMap, Box, Partition, affine_inverse, as_scalar
from rbfractal.grid import GridFunction, grid_eval, sup_distance
from rbfractal.plan import (
    Piece,
    apply_pieces,
    as_point,
    branch_value,
    check_covers,
    compatibility_witnesses,
    coefficient_at,
    endpoint_values,
    locate,
    plain_value,
    same_scalar,
    value_dim_of,
)
from rbfractal.quaternion import Side
from rbfractal.reports import ConditionKind, ConditionReport, FixedPointResult, Witness

if TYPE_CHECKING:
    from collections.abc import Callable, Iterator, Sequence

    from numpy.typing import NDArray

    from rbfractal.geometry import Scalar

log = structlog.get_logger()

# contraction factors at or above 1 - CONTRACTION_GUARD are refused
CONTRACTION_GUARD = 1e-12
JUNCTION_TOL = 1e-9


@dataclass(frozen=True)
class RBOperator:
    partition: Partition
    q: tuple[CoefficientFn, ...]
    s: tuple[CoefficientFn, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", tuple(self.q))
        object.__setattr__(self, "s", tuple(self.s))
        n = self.partition.n
        if not (len(self.q) == len(self.s) == n):
            msg = f"{n} maps need {n} q and {n} s functions, got {len(self.q)} and {len(self.s)}"
            raise ShapeMismatch(msg)
        for c in (*self.q, *self.s):
            check_covers(c, self.partition.domain)
        for i, c in enumerate(self.s):
            if c.value_dim != 1:
                msg = f"s{i + 1} is quaternion-valued; use a quaternionic operator"
                raise ShapeMismatch(msg)

    @property
    def domain(self) -> Box:
        return self.partition.domain

    @property
    def n(self) -> int:
        return self.partition.n

    @property
    def value_dim(self) -> int:
        return value_dim_of(self.pieces)

    @functools.cached_property
    def pieces(self) -> tuple[Piece, ...]:
        return tuple(
            Piece(self.domain, m, q, s)
            for m, q, s in zip(self.partition.maps, self.q, self.s, strict=True)
        )


# ── Contraction and application ──────────────────────────────────────


def contraction_factor(op: RBOperator) -> float:
    """``max_i sup |s_i|``, the Lipschitz constant of ``T`` on bounded functions."""
    factor = max(c.sup_bound for c in op.s)
    log.debug("contraction_factor", factor=factor, n=op.n)
    return factor


def apply(op: RBOperator, f: GridFunction) -> GridFunction:
    return apply_pieces(op.domain, op.pieces, f, k=op.value_dim)


def zero_term(op: RBOperator, resolution: int) -> GridFunction:
    """The grid of ``T(0)``, i.e. ``q_i∘l_i⁻¹`` on each image."""
    zero = GridFunction.constant(op.domain, resolution, [0.0] * op.value_dim)
    return apply(op, zero)


def picard_iterates(op: RBOperator, f0: GridFunction) -> Iterator[GridFunction]:
    """``ψ_1, ψ_2, …`` with ``ψ_k = T ψ_{k-1}``."""
    f = f0
    while True:
        f = apply(op, f)
        yield f


def banach_iterate(
    step: Callable[[GridFunction], GridFunction],
    s: float,
    f0: GridFunction,
    eps: float,
    k_max: int,
) -> FixedPointResult:
    """Iterate ``step`` until the a-priori bound ``s^k/(1-s)·‖ψ_1-ψ_0‖`` drops to ``eps``."""
    if eps <= 0:
        msg = f"eps must be positive, got {eps}"
        raise DomainError(msg)
    if s >= 1 - CONTRACTION_GUARD:
        raise NotContractive(s, CONTRACTION_GUARD)

    psi = step(f0)
    d1 = sup_distance(psi, f0)

    def apriori(k: int) -> float:
        return s**k / (1 - s) * d1

    k = 1
    while apriori(k) > eps:
        if k >= k_max:
            residual = sup_distance(step(psi), psi)
            partial = FixedPointResult(psi, k, s, apriori(k), residual)
            log.warning("fixed_point_not_reached", iterations=k, apriori_bound=apriori(k), eps=eps)
            raise MaxIterations(partial, eps)
        psi = step(psi)
        k += 1
        log.debug("picard_step", k=k, apriori_bound=apriori(k))

    residual = sup_distance(step(psi), psi)
    log.info(
        "fixed_point_converged",
        iterations=k,
        contraction=s,
        apriori_bound=apriori(k),
        residual=residual,
    )
    return FixedPointResult(psi, k, s, apriori(k), residual)


def iterate_to_fixed_point(
    op: RBOperator, f0: GridFunction, eps: float, k_max: int
) -> FixedPointResult:
    return banach_iterate(functools.partial(apply, op), contraction_factor(op), f0, eps, k_max)


# ── Grid-free evaluation ─────────────────────────────────────────────


@dataclass(frozen=True)
class AddressValue:
    value: float | tuple[float, ...]
    error_bound: float
    address: tuple[int, ...]


def evaluate_by_address(
    op: RBOperator,
    x: Scalar | Sequence[Scalar],
    depth: int,
    f0_value: float | Sequence[float] = 0.0,
) -> AddressValue:
    """``T^m f_0`` at ``x`` through the address ``(i_1, …, i_m)`` of ``x``.

    The address is resolved by repeated inverse-map location and the
    self-referential equation is unrolled from the innermost level outwards.
    ``address`` is 1-based.
    """
    if depth < 1:
        msg = f"depth must be at least 1, got {depth}"
        raise DomainError(msg)
    point = as_point(x)
    if not op.domain.contains(point, closure=True):
        msg = f"{point} lies outside {op.domain}"
        raise DomainError(msg, [float(v) for v in point])
    s = contraction_factor(op)
    if s >= 1 - CONTRACTION_GUARD:
        raise NotContractive(s, CONTRACTION_GUARD)

    steps: list[tuple[Piece, tuple[Scalar, ...]]] = []
    address: list[int] = []
    z = point
    for _ in range(depth):
        i = locate(op.domain, op.pieces, z)
        z = op.pieces[i].inverse(z)
        steps.append((op.pieces[i], z))
        address.append(i + 1)

    start = np.atleast_1d(np.asarray(f0_value, dtype=np.float64))
    value = start
    product = 1.0
    for piece, xi in reversed(steps):
        value = branch_value(piece, xi, value)
        product *= float(np.linalg.norm(coefficient_at(piece.s, xi)))

    big_m = max(c.sup_bound for c in op.q)
    bound = product * (float(np.linalg.norm(start)) + big_m / (1 - s))
    plain = float(value[0]) if value.size == 1 else tuple(float(v) for v in value)
    return AddressValue(plain, bound, tuple(address))


# ── Conditions ───────────────────────────────────────────────────────


def check_compatibility(
    op: RBOperator, psi: GridFunction, tol: float = JUNCTION_TOL
) -> ConditionReport:
    """Compatibility conditions at points shared by two images."""
    witnesses = compatibility_witnesses(op.domain, op.pieces, psi)
    report = ConditionReport(ConditionKind.COMPATIBILITY, tuple(witnesses), tol)
    log.info("compatibility_checked", witnesses=len(witnesses), verdict=report.verdict)
    return report


def boundary_values(op: RBOperator) -> list[tuple[Scalar, float | tuple[float, ...]]]:
    """Closed-form values of the fixed point at the ends of a 1-D domain."""
    return [(p, plain_value(v)) for p, v in endpoint_values(op.domain, op.pieces)]


def check_continuity(op: RBOperator, tol: float = JUNCTION_TOL) -> ConditionReport:
    """Join-up conditions at every junction of adjacent images."""
    return junction_report(op.domain, op.pieces, tol)


def junction_report(
    domain: Box, pieces: Sequence[Piece], tol: float, side: Side = Side.LEFT
) -> ConditionReport:
    if domain.dim != 1:
        msg = "continuity is checked on 1-D domains only"
        raise DomainError(msg)
    ends = dict(endpoint_values(domain, pieces, side))
    order = sorted(range(len(pieces)), key=lambda i: pieces[i].image()[0][0])
    witnesses: list[Witness] = []

    first_lo = pieces[order[0]].image()[0][0]
    last_hi = max(pieces[i].image()[1][0] for i in order)
    if first_lo > domain.lo[0] or last_hi < domain.hi[0]:
        witnesses.append(
            Witness(f"coverage of {domain}", float(first_lo), float(last_hi), math.inf)
        )

    for left_i, right_i in zip(order, order[1:], strict=False):
        left, right = pieces[left_i], pieces[right_i]
        a_hi, b_lo = left.image()[1][0], right.image()[0][0]
        if a_hi != b_lo:
            kind = "gap" if a_hi < b_lo else "overlap"
            witnesses.append(
                Witness(
                    f"{kind} between images {left_i + 1} and {right_i + 1}",
                    float(a_hi),
                    float(b_lo),
                    math.inf,
                )
            )
            continue
        lhs = _one_sided(left, a_hi, ends, side)
        rhs = _one_sided(right, b_lo, ends, side)
        witnesses.append(
            Witness(
                f"x = {a_hi}",
                plain_value(lhs),
                plain_value(rhs),
                float(np.linalg.norm(lhs - rhs)),
                (float(a_hi),),
            )
        )
    report = ConditionReport(ConditionKind.CONTINUOUS, tuple(witnesses), tol)
    log.info("continuity_checked", junctions=len(witnesses), verdict=report.verdict)
    return report


def _one_sided(
    piece: Piece,
    junction: Scalar,
    ends: dict[Scalar, NDArray[np.float64]],
    side: Side,
) -> NDArray[np.float64]:
    """Limit of ``Tψ`` at ``junction`` from inside ``piece``'s image."""
    xi = piece.inverse((junction,))[0]
    value = next((v for e, v in ends.items() if same_scalar(e, xi)), None)
    if value is None:
        msg = f"junction {junction} does not come from an endpoint of the domain"
        raise DomainError(msg, [float(junction)])
    return branch_value(piece, (xi,), value, side)


def lp_measure(pieces: Sequence[Piece], p: float) -> float:
    """``Σ_i λ_i ‖s_i‖^p`` with ``λ_i = ‖(l_i⁻¹)′‖``, or ``max_i ‖s_i‖`` for ``p = ∞``."""
    if not p >= 1:
        msg = f"p must lie in [1, inf], got {p}"
        raise DomainError(msg)
    bounds = [piece.s.sup_bound for piece in pieces]
    if math.isinf(p):
        return max(bounds)
    weights = [float(affine_inverse(piece.map).jacobian) for piece in pieces]
    return math.fsum(w * b**p for w, b in zip(weights, bounds, strict=True))


def lp_report(pieces: Sequence[Piece], p: float) -> ConditionReport:
    value = lp_measure(pieces, p)
    witness = Witness(
        f"p = {p:g}",
        value,
        1.0,
        max(0.0, value - (1 - CONTRACTION_GUARD)),
    )
    report = ConditionReport(ConditionKind.LP, (witness,), 0.0, measure=value)
    log.info("lp_certificate", p=p, measure=value, verdict=report.verdict)
    return report


def lp_certificate(op: RBOperator, p: float) -> ConditionReport:
    """``L^p`` contractivity: ``Σ λ_i s_i^p < 1`` (``max s_i < 1`` for ``p = ∞``)."""
    return lp_report(op.pieces, p)


# ── Fractal interpolation ────────────────────────────────────────────


def build_fif(
    data: Sequence[tuple[Scalar | int, Scalar | int]],
    scales: Sequence[CoefficientFn],
) -> RBOperator:
    """The operator whose fixed point interpolates ``data``.

    ``l_i`` maps ``[x_0, x_n]`` onto ``[x_{i-1}, x_i]`` and ``q_i = c_i x + d_i`` solves
    ``q_i(x_0) + s_i(x_0) y_0 = y_{i-1}`` and ``q_i(x_n) + s_i(x_n) y_n = y_i``.
    The coefficients are exact when the data and scales are rational.
    """
    points = [(as_scalar(x), as_scalar(y)) for x, y in data]
    if len(points) < 2:
        msg = "fractal interpolation needs at least two data points"
        raise DomainError(msg)
    for j in range(1, len(points)):
        if points[j][0] <= points[j - 1][0]:
            raise UnsortedData(j)
    n = len(points) - 1
    if len(scales) != n:
        msg = f"{n + 1} data points need {n} scale functions, got {len(scales)}"
        raise ShapeMismatch(msg)

    (x0, y0), (xn, yn) = points[0], points[-1]
    domain = Box.interval(x0, xn)
    width = xn - x0
    maps, qs, ss = [], [], []
    for i in range(1, n + 1):
        scale = scales[i - 1].on(domain)
        if scale.sup_bound >= 1:
            raise ScaleTooLarge(i - 1, scale.sup_bound)
        s_lo, s_hi = _endpoint_scale(scale, x0), _endpoint_scale(scale, xn)
        (xa, ya), (xb, yb) = points[i - 1], points[i]
        a = (xb - xa) / width
        maps.append(AffineMap.line(a, xa - a * x0))
        left, right = ya - s_lo * y0, yb - s_hi * yn
        c = (right - left) / width
        d = left - c * x0
        body = BinOp("+", BinOp("*", const(c), Var()), const(d))
        qs.append(CoefficientFn(body, domain, source=f"{c}*x + {d}"))
        ss.append(scale)

    op = RBOperator(Partition(domain, tuple(maps)), tuple(qs), tuple(ss))
    log.info("fif_built", points=n + 1, domain=str(domain))
    return op


def _endpoint_scale(scale: CoefficientFn, x: Scalar) -> Scalar:
    exact = scale.exact_constant
    if exact is not None:
        return exact
    return float(coefficient_at(scale, (x,))[0])


def interpolation_errors(
    psi: GridFunction, data: Sequence[tuple[Scalar, Scalar]]
) -> list[float]:
    """``|ψ(x_j) - y_j|`` for each data point."""
    return [abs(float(np.atleast_1d(grid_eval(psi, x))[0]) - float(y)) for x, y in data]


__all__ = [
    "AddressValue",
    "RBOperator",
    "apply",
    "banach_iterate",
    "boundary_values",
    "build_fif",
    "check_compatibility",
    "check_continuity",
    "contraction_factor",
    "evaluate_by_address",
    "interpolation_errors",
    "iterate_to_fixed_point",
    "junction_report",
    "lp_certificate",
    "lp_measure",
    "lp_report",
    "picard_iterates",
    "zero_term",
]
