"""Quaternion-valued RB operators ``Tf(l_i(x)) = q_i(x) + s_i(x)·f(x)``.

The scale multiplies from the left by default; ``Side.RIGHT`` gives the
``f(x)·s_i(x)`` variant, whose fixed point is in general a different function.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import structlog

from rbfractal.errors import BadAxis, ShapeMismatch
from rbfractal.plan import (
    Piece,
    apply_pieces,
    as_point,
    branch_value,
    check_covers,
    endpoint_values,
)
from rbfractal.quaternion import Quaternion, Side
from rbfractal.rb_global import banach_iterate

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from rbfractal.coefficients import CoefficientFn
    from rbfractal.geometry import Box, Partition, Scalar
    from rbfractal.grid import GridFunction
    from rbfractal.reports import FixedPointResult

log = structlog.get_logger()

type Axis = int | str


@dataclass(frozen=True)
class QuatRBOperator:
    partition: Partition
    q: tuple[CoefficientFn, ...]
    s: tuple[CoefficientFn, ...]
    side: Side = Side.LEFT

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", tuple(self.q))
        object.__setattr__(self, "s", tuple(self.s))
        n = self.partition.n
        if not (len(self.q) == len(self.s) == n):
            msg = f"{n} maps need {n} q and {n} s functions, got {len(self.q)} and {len(self.s)}"
            raise ShapeMismatch(msg)
        for c in (*self.q, *self.s):
            check_covers(c, self.partition.domain)

    @property
    def domain(self) -> Box:
        return self.partition.domain

    @property
    def n(self) -> int:
        return self.partition.n

    @functools.cached_property
    def pieces(self) -> tuple[Piece, ...]:
        return tuple(
            Piece(self.domain, m, q, s)
            for m, q, s in zip(self.partition.maps, self.q, self.s, strict=True)
        )

    def with_side(self, side: Side) -> QuatRBOperator:
        return QuatRBOperator(self.partition, self.q, self.s, side)


def quat_contraction(op: QuatRBOperator) -> float:
    """``max_i sup |s_i|`` in the quaternion norm."""
    return max(c.sup_bound for c in op.s)


def quat_apply(op: QuatRBOperator, f: GridFunction) -> GridFunction:
    return apply_pieces(op.domain, op.pieces, f, k=4, side=op.side)


def quat_fixed_point(
    op: QuatRBOperator, f0: GridFunction, eps: float, k_max: int
) -> FixedPointResult:
    log.info("quat_fixed_point", side=str(op.side), pieces=op.n)
    step = functools.partial(quat_apply, op)
    return banach_iterate(step, quat_contraction(op), f0, eps, k_max)


def quat_boundary_values(op: QuatRBOperator) -> list[tuple[Scalar, Quaternion]]:
    """``ψ = (1 - s)⁻¹ q`` (right mode ``q (1 - s)⁻¹``) solved at the domain ends."""
    return [(p, _quaternion(v)) for p, v in endpoint_values(op.domain, op.pieces, op.side)]


def address_point(
    op: QuatRBOperator, address: Sequence[int], x: Scalar | Sequence[Scalar]
) -> tuple[Scalar, ...]:
    """``l_{i_m}∘⋯∘l_{i_1}(x)`` for the 0-based ``address = (i_1, …, i_m)``."""
    z = as_point(x)
    for i in address:
        z = op.partition.maps[i](z)
    return z


def m_fold_eval(
    op: QuatRBOperator,
    address: Sequence[int],
    x: Scalar | Sequence[Scalar],
    f0_value: Quaternion | Sequence[float] = (0.0, 0.0, 0.0, 0.0),
) -> Quaternion:
    """``T^m f`` at ``address_point(op, address, x)`` given ``f(x) = f0_value``.

    With ``z_0 = x`` and ``z_k = l_{i_k}(z_{k-1})`` the value is built as
    ``v_k = q_{i_k}(z_{k-1}) + s_{i_k}(z_{k-1})·v_{k-1}``, so the scale factors end up
    in the ordered product ``s_{i_m}(z_{m-1})⋯s_{i_1}(z_0)`` in front of ``f(x)``.
    """
    if not address:
        msg = "address must name at least one piece"
        raise ShapeMismatch(msg)
    parts = f0_value.as_floats() if isinstance(f0_value, Quaternion) else tuple(f0_value)
    v = np.array(parts, dtype=np.float64)
    z = as_point(x)
    for i in address:
        v = branch_value(op.pieces[i], z, v, op.side)
        z = op.partition.maps[i](z)
    return _quaternion(v)


def component_projection(psi: GridFunction, axes: Sequence[Axis]) -> NDArray[np.float64]:
    """Columns ``ψ_a`` (``a`` in 0..3) or the coordinate ``x`` for graph projections.

    Two axes give a planar projection such as ``(x, ψ_1)``, three axes a
    parametric curve such as ``(ψ_0, ψ_1, ψ_2)``.
    """
    if psi.value_dim != 4:
        msg = f"projection needs a quaternion-valued grid, got value dimension {psi.value_dim}"
        raise ShapeMismatch(msg)
    if len(axes) not in (2, 3):
        msg = f"project onto 2 or 3 axes, got {len(axes)}"
        raise ShapeMismatch(msg)
    columns = []
    for axis in axes:
        if axis == "x" and psi.domain.dim == 1:
            columns.append(psi.nodes[:, 0])
        elif isinstance(axis, int) and not isinstance(axis, bool) and 0 <= axis <= 3:
            columns.append(psi.values[:, axis])
        else:
            raise BadAxis(axis)
    return np.column_stack(columns)


def parse_axes(text: str) -> tuple[Axis, ...]:
    """``"x,1"`` → ``("x", 1)``; ``"0,1,2"`` → ``(0, 1, 2)``."""
    axes: list[Axis] = []
    for token in text.split(","):
        token = token.strip()
        if token == "x":
            axes.append(token)
        elif token.isdigit():
            axes.append(int(token))
        else:
            raise BadAxis(token)
    return tuple(axes)


def _quaternion(v: NDArray[np.float64]) -> Quaternion:
    if v.size == 1:
        return Quaternion(float(v[0]), 0.0, 0.0, 0.0)
    a, v1, v2, v3 = (float(c) for c in v)
    return Quaternion(a, v1, v2, v3)
