"""Piecewise machinery shared by the global, local and quaternionic operators.

An operator is a tuple of :class:`Piece` objects ``(X_i, l_i, q_i, s_i)``; a
global operator simply has ``X_i = X`` for every piece.  Applying one on a grid
goes through an :class:`ApplyPlan` that records, once per resolution, which
piece owns each node, the grid coordinates of its preimage and the coefficient
values there.

Ownership follows the half-open convention: a node belongs to the first piece
whose image ``[lo, hi)`` contains it (closed on the right only at a closed end
of the domain); nodes left over, such as the right end of ``[0, 1)``, go to
the first piece whose closed image contains them.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING

import numpy as np

from rbfractal.errors import DegenerateScale, DomainError, PartitionGap, ShapeMismatch
from rbfractal.geometry import FLOAT_TOL, affine_inverse, as_scalar, fmt_scalar
from rbfractal.grid import (
    NODE_SNAP,
    GridFunction,
    grid_eval,
    interpolate,
    node_coordinates,
)
from rbfractal.quaternion import Side, hamilton, hamilton_rows
from rbfractal.reports import Witness

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from rbfractal.coefficients import CoefficientFn
    from rbfractal.geometry import AffineMap, Box, Scalar

_E0 = np.array([1.0, 0.0, 0.0, 0.0])

# |1 - s| below this makes an endpoint equation singular
SINGULAR_TOL = 1e-15


@dataclass(frozen=True)
class Piece:
    """``l`` maps ``subset`` into the domain; ``q`` and ``s`` live on ``subset``."""

    subset: Box
    map: AffineMap
    q: CoefficientFn
    s: CoefficientFn

    @functools.cached_property
    def inverse(self) -> AffineMap:
        return affine_inverse(self.map)

    def image(self) -> tuple[tuple[Scalar, ...], tuple[Scalar, ...]]:
        return self.map.image(self.subset)


def check_covers(c: CoefficientFn, domain: Box) -> None:
    """Raise unless ``c`` is defined on all of ``domain``."""
    inside = all(
        clo <= lo and hi <= chi
        for clo, chi, lo, hi in zip(c.domain.lo, c.domain.hi, domain.lo, domain.hi, strict=True)
    )
    if c.domain.dim != domain.dim or not inside:
        msg = f"coefficient {c} is defined on {c.domain}, which does not contain {domain}"
        raise DomainError(msg)


def value_dim_of(pieces: Sequence[Piece], *, quaternion: bool = False) -> int:
    if quaternion:
        return 4
    return max(p.q.value_dim for p in pieces)


# ── Apply plans ──────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class ApplyPlan:
    """Per-node data for one operator at one resolution, rows in node order."""

    resolution: int
    owner: NDArray[np.intp]
    base: NDArray[np.intp]
    frac: NDArray[np.float64]
    q: NDArray[np.float64]
    s: NDArray[np.float64]

    def combine(
        self, f_values: NDArray[np.float64], side: Side = Side.LEFT
    ) -> NDArray[np.float64]:
        """``q + s·f(ξ)`` at every node."""
        f = interpolate(f_values, self.resolution, self.base, self.frac)
        if self.s.ndim == 1:
            return self.q + self.s[:, None] * f
        if side is Side.RIGHT:
            return self.q + hamilton_rows(f, self.s)
        return self.q + hamilton_rows(self.s, f)


def _snap(u: float) -> float:
    nearest = round(u)
    return float(nearest) if abs(u - nearest) < NODE_SNAP else u


def _lattice(value: Scalar, lo: Scalar, step: Scalar) -> Scalar:
    u = (value - lo) / step
    return u if isinstance(u, Fraction) else _snap(u)


def _index_range(
    lo: Scalar, hi: Scalar, d_lo: Scalar, step: Scalar, resolution: int, *, closed: bool
) -> range:
    """Indices ``J`` with ``lo <= d_lo + J*step`` and ``< hi`` (``<= hi`` when closed)."""
    a, b = _lattice(lo, d_lo, step), _lattice(hi, d_lo, step)
    first = max(math.ceil(a), 0)
    last = math.floor(b) if closed else math.ceil(b) - 1
    return range(first, min(last, resolution - 1) + 1)


def _right_closed(domain: Box, hi: Sequence[Scalar]) -> tuple[bool, ...]:
    return tuple(
        c and abs(h - dh) <= (0 if domain.exact else FLOAT_TOL)
        for h, dh, c in zip(hi, domain.hi, domain.closed, strict=True)
    )


def _assign_owners(domain: Box, pieces: Sequence[Piece], resolution: int) -> NDArray[np.intp]:
    shape = (resolution,) * domain.dim
    owner = np.full(shape, -1, dtype=np.intp)
    steps = [domain.width(j) / (resolution - 1) for j in range(domain.dim)]
    for closure in (False, True):
        for i, piece in enumerate(pieces):
            lo, hi = piece.image()
            closed = (True,) * domain.dim if closure else _right_closed(domain, hi)
            ranges = [
                _index_range(lo[j], hi[j], domain.lo[j], steps[j], resolution, closed=closed[j])
                for j in range(domain.dim)
            ]
            if any(len(r) == 0 for r in ranges):
                continue
            block = np.ix_(*(np.array(r, dtype=np.intp) for r in ranges))
            sub = owner[block]
            sub[sub == -1] = i
            owner[block] = sub
    missing = np.argwhere(owner == -1)
    if missing.size:
        index = missing[0]
        point = [
            float(node_coordinates(domain, resolution, j)[index[j]]) for j in range(domain.dim)
        ]
        raise PartitionGap(point)
    return owner.ravel()


def _axis_preimages(
    domain: Box, piece: Piece, resolution: int, axis: int
) -> tuple[NDArray[np.intp], NDArray[np.float64], NDArray[np.float64]]:
    """Lattice base, offset and coordinate of ``l⁻¹`` applied to every node on ``axis``."""
    a, b = piece.map.scale[axis], piece.map.offset[axis]
    lo = domain.lo[axis]
    step = domain.width(axis) / (resolution - 1)
    top = resolution - 1
    base = np.empty(resolution, dtype=np.intp)
    frac = np.empty(resolution)
    coord = np.empty(resolution)
    exact = all(isinstance(v, Fraction) for v in (a, b, lo, step))
    for jdx in range(resolution):
        u: Scalar = jdx / a + (lo - b - a * lo) / (a * step)
        if not exact:
            u = _snap(float(u))
        u = min(max(u, 0), top)
        k = min(math.floor(u), top - 1)
        base[jdx] = k
        frac[jdx] = float(u - k)
        coord[jdx] = float(lo + u * step)
    return base, frac, coord


def _lift(values: NDArray[np.float64], k: int) -> NDArray[np.float64]:
    if values.ndim == 2:
        return values
    if k == 1:
        return values[:, None]
    lifted = np.zeros((values.shape[0], k))
    lifted[:, 0] = values
    return lifted


@functools.lru_cache(maxsize=64)
def build_plan(domain: Box, pieces: tuple[Piece, ...], resolution: int, k: int) -> ApplyPlan:
    owner = _assign_owners(domain, pieces, resolution)
    shape = (resolution,) * domain.dim
    n_nodes = owner.shape[0]
    quaternion_scales = any(p.s.value_dim == 4 for p in pieces)

    base = np.empty((n_nodes, domain.dim), dtype=np.intp)
    frac = np.empty((n_nodes, domain.dim))
    q = np.empty((n_nodes, k))
    s = np.empty((n_nodes, 4)) if quaternion_scales else np.empty(n_nodes)

    for i, piece in enumerate(pieces):
        rows = np.flatnonzero(owner == i)
        if rows.size == 0:
            continue
        multi = np.unravel_index(rows, shape)
        axes = [_axis_preimages(domain, piece, resolution, j) for j in range(domain.dim)]
        base[rows] = np.stack([axes[j][0][multi[j]] for j in range(domain.dim)], axis=-1)
        frac[rows] = np.stack([axes[j][1][multi[j]] for j in range(domain.dim)], axis=-1)
        xi = np.stack([axes[j][2][multi[j]] for j in range(domain.dim)], axis=-1)
        q[rows] = _lift(piece.q.values(xi), k)
        s_vals = piece.s.values(xi)
        s[rows] = _lift(s_vals, 4) if quaternion_scales else s_vals

    for arr in (owner, base, frac, q, s):
        arr.flags.writeable = False
    return ApplyPlan(resolution, owner, base, frac, q, s)


def apply_pieces(
    domain: Box,
    pieces: tuple[Piece, ...],
    f: GridFunction,
    *,
    k: int,
    side: Side = Side.LEFT,
) -> GridFunction:
    """One application of the operator given by ``pieces`` to the grid ``f``."""
    if f.domain != domain:
        msg = f"grid lives on {f.domain}, operator on {domain}"
        raise ShapeMismatch(msg)
    if f.value_dim != k:
        msg = f"grid has value dimension {f.value_dim}, operator expects {k}"
        raise ShapeMismatch(msg)
    plan = build_plan(domain, pieces, f.resolution, k)
    return GridFunction(domain, f.resolution, plan.combine(f.values, side))


# ── Pointwise evaluation ─────────────────────────────────────────────


def _in_half_open(
    domain: Box, lo: Sequence[Scalar], hi: Sequence[Scalar], x: Sequence[Scalar]
) -> bool:
    closed = _right_closed(domain, hi)
    return all(
        a <= v < b or (c and v == b)
        for v, a, b, c in zip(x, lo, hi, closed, strict=True)
    )


def locate(domain: Box, pieces: Sequence[Piece], point: Sequence[Scalar]) -> int:
    """Index of the piece that owns ``point`` under the half-open convention."""
    for i, piece in enumerate(pieces):
        lo, hi = piece.image()
        if _in_half_open(domain, lo, hi, point):
            return i
    for i, piece in enumerate(pieces):
        lo, hi = piece.image()
        if all(a <= v <= b for v, a, b in zip(point, lo, hi, strict=True)):
            return i
    raise PartitionGap([float(v) for v in point])


def coefficient_at(c: CoefficientFn, point: Sequence[Scalar]) -> NDArray[np.float64]:
    """Value of ``c`` at one point as a 1-D array of length 1 or 4."""
    row = c.values(np.array([[float(v) for v in point]], dtype=np.float64))
    return np.atleast_1d(row[0]).astype(np.float64)


def scale_product(
    s: NDArray[np.float64], v: NDArray[np.float64], side: Side = Side.LEFT
) -> NDArray[np.float64]:
    """``s·v`` (left) or ``v·s`` (right); real factors commute."""
    if s.size == 1 or v.size == 1:
        return s * v
    pair = (v, s) if side is Side.RIGHT else (s, v)
    return np.array(hamilton(*pair))


def branch_value(
    piece: Piece,
    xi: Sequence[Scalar],
    v: NDArray[np.float64],
    side: Side = Side.LEFT,
) -> NDArray[np.float64]:
    """``q(ξ) + s(ξ)·v``, lifting real parts into ℍ when needed."""
    q = coefficient_at(piece.q, xi)
    prod = scale_product(coefficient_at(piece.s, xi), np.atleast_1d(v), side)
    if q.size == prod.size:
        return q + prod
    size = max(q.size, prod.size)
    return _embed(q, size) + _embed(prod, size)


def _embed(v: NDArray[np.float64], size: int) -> NDArray[np.float64]:
    if v.size == size:
        return v
    return v[0] * _E0 if size == 4 else np.full(size, v[0])


def solve_unit(
    s: NDArray[np.float64], q: NDArray[np.float64], side: Side, point: float
) -> NDArray[np.float64]:
    """Solve ``u = q + s·u`` (or ``u = q + u·s``)."""
    one_minus = 1.0 - s if s.size == 1 else _E0 - s
    if float(np.linalg.norm(one_minus)) < SINGULAR_TOL:
        raise DegenerateScale(point)
    if s.size == 1:
        return q / one_minus
    inverse = np.array([one_minus[0], *(-one_minus[1:])]) / float(one_minus @ one_minus)
    return scale_product(inverse, _embed(q, 4), side)


def endpoint_values(
    domain: Box, pieces: Sequence[Piece], side: Side = Side.LEFT
) -> list[tuple[Scalar, NDArray[np.float64]]]:
    """Values of the fixed point at the ends of a 1-D domain from the endpoint equations.

    Each end ``e`` satisfies ``ψ(e) = q_a(p) + s_a(p)·ψ(p)`` where ``l_a(p) = e`` and
    ``p`` is itself an end, so the two unknowns solve a linear system.  With a
    single map the value at its fixed point is returned instead.
    """
    if domain.dim != 1:
        msg = "endpoint values are defined for 1-D domains only"
        raise DomainError(msg)
    for piece in pieces:
        if piece.subset.lo != domain.lo or piece.subset.hi != domain.hi:
            msg = "endpoint values need every coefficient to live on the whole domain"
            raise DomainError(msg)

    x0, xn = domain.lo[0], domain.hi[0]
    if len(pieces) == 1:
        return [_single_map_value(pieces[0], side)]

    def preimage_end(e: Scalar) -> tuple[Piece, Scalar]:
        piece = pieces[locate(domain, pieces, (e,))]
        p = piece.inverse((e,))[0]
        for end in (x0, xn):
            if same_scalar(p, end):
                return piece, end
        msg = f"the preimage {fmt_scalar(p)} of the endpoint {fmt_scalar(e)} is not an endpoint"
        raise DomainError(msg, [float(e)])

    (pa, ea), (pb, eb) = preimage_end(x0), preimage_end(xn)
    qa, sa = coefficient_at(pa.q, (ea,)), coefficient_at(pa.s, (ea,))
    qb, sb = coefficient_at(pb.q, (eb,)), coefficient_at(pb.s, (eb,))

    if same_scalar(ea, x0) and same_scalar(eb, xn):
        u0 = solve_unit(sa, qa, side, float(x0))
        un = solve_unit(sb, qb, side, float(xn))
    elif same_scalar(ea, xn) and same_scalar(eb, x0):
        composite = scale_product(sa, sb, side)
        u0 = solve_unit(composite, _add(qa, scale_product(sa, qb, side)), side, float(x0))
        un = _add(qb, scale_product(sb, u0, side))
    elif same_scalar(ea, x0):
        u0 = solve_unit(sa, qa, side, float(x0))
        un = _add(qb, scale_product(sb, u0, side))
    else:
        un = solve_unit(sb, qb, side, float(xn))
        u0 = _add(qa, scale_product(sa, un, side))
    return [(x0, u0), (xn, un)]


def _single_map_value(piece: Piece, side: Side) -> tuple[Scalar, NDArray[np.float64]]:
    a, b = piece.map.scale[0], piece.map.offset[0]
    if a == 1:
        msg = "a single map without a unique fixed point"
        raise DomainError(msg)
    p = b / (1 - a)
    q, s = coefficient_at(piece.q, (p,)), coefficient_at(piece.s, (p,))
    return p, solve_unit(s, q, side, float(p))


def _add(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    size = max(a.size, b.size)
    return _embed(a, size) + _embed(b, size)


def same_scalar(a: Scalar, b: Scalar) -> bool:
    """Exact equality for fractions, ``FLOAT_TOL`` otherwise."""
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    return abs(float(a) - float(b)) <= FLOAT_TOL


# ── Compatibility conditions ─────────────────────────────────────────


def _shared_points(
    domain: Box, psi: GridFunction, lo: Sequence[Scalar], hi: Sequence[Scalar]
) -> list[tuple[Scalar, ...]]:
    axes: list[list[Scalar]] = []
    for j in range(domain.dim):
        coords = {lo[j], hi[j]}
        coords.update(
            c for c in node_coordinates(domain, psi.resolution, j) if lo[j] < c < hi[j]
        )
        axes.append(sorted(coords))
    return list(itertools.product(*axes))


def compatibility_witnesses(
    domain: Box,
    pieces: Sequence[Piece],
    psi: GridFunction,
    side: Side = Side.LEFT,
) -> list[Witness]:
    """Check ``q_i(x₁) + s_i(x₁)ψ(x₁) = q_j(x₂) + s_j(x₂)ψ(x₂)`` where ``l_i(x₁) = l_j(x₂)``.

    Images are taken as true images of the subsets, so half-open domains make
    adjacent images disjoint and produce no witnesses.
    """
    witnesses: list[Witness] = []
    for (i, pi), (j, pj) in itertools.combinations(enumerate(pieces), 2):
        (alo, ahi), (blo, bhi) = pi.image(), pj.image()
        lo = tuple(max(a, b) for a, b in zip(alo, blo, strict=True))
        hi = tuple(min(a, b) for a, b in zip(ahi, bhi, strict=True))
        if any(a > b for a, b in zip(lo, hi, strict=True)):
            continue
        for point in _shared_points(domain, psi, lo, hi):
            x1, x2 = pi.inverse(point), pj.inverse(point)
            if not (pi.subset.contains(x1) and pj.subset.contains(x2)):
                continue
            lhs = branch_value(pi, x1, np.atleast_1d(grid_eval(psi, x1)), side)
            rhs = branch_value(pj, x2, np.atleast_1d(grid_eval(psi, x2)), side)
            witnesses.append(
                Witness(
                    location=(
                        f"l{i + 1}({_fmt(x1)}) = l{j + 1}({_fmt(x2)}) = {_fmt(point)}"
                    ),
                    lhs=plain_value(lhs),
                    rhs=plain_value(rhs),
                    gap=float(np.linalg.norm(lhs - rhs)),
                    point=tuple(float(v) for v in point),
                )
            )
    return witnesses


def _fmt(point: Sequence[Scalar]) -> str:
    if len(point) == 1:
        return fmt_scalar(point[0])
    return "(" + ", ".join(fmt_scalar(v) for v in point) + ")"


def plain_value(v: NDArray[np.float64]) -> float | tuple[float, ...]:
    return float(v[0]) if v.size == 1 else tuple(float(c) for c in v)


def as_point(x: Scalar | int | Sequence[Scalar]) -> tuple[Scalar, ...]:
    if isinstance(x, int | float | Fraction):
        return (as_scalar(x),)
    return tuple(as_scalar(v) for v in x)
