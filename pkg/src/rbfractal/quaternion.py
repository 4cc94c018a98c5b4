"""Real quaternion algebra ℍ.

``hamilton`` is written against 4-tuples of any ring elements, so the same
product serves ``Fraction`` (exact), ``float``, interval enclosures and numpy
component arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import StrEnum
from fractions import Fraction
from typing import TYPE_CHECKING, Any, Protocol, Self

import numpy as np

from rbfractal.errors import NotAVector, ZeroDivisor

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray


type Part = Fraction | float


class Side(StrEnum):
    """Which side the scale function multiplies the unknown from."""

    LEFT = "left"
    RIGHT = "right"


class _Ring(Protocol):
    def __add__(self, other: Any, /) -> Self: ...
    def __sub__(self, other: Any, /) -> Self: ...
    def __mul__(self, other: Any, /) -> Self: ...


def hamilton[R: _Ring](p: Sequence[R], q: Sequence[R]) -> tuple[R, R, R, R]:
    """Hamilton product of two quaternions given as ``(a, v1, v2, v3)`` sequences."""
    p0, p1, p2, p3 = p
    q0, q1, q2, q3 = q
    return (
        p0 * q0 - p1 * q1 - p2 * q2 - p3 * q3,
        p0 * q1 + p1 * q0 + p2 * q3 - p3 * q2,
        p0 * q2 - p1 * q3 + p2 * q0 + p3 * q1,
        p0 * q3 + p1 * q2 - p2 * q1 + p3 * q0,
    )


def hamilton_rows(p: NDArray[np.float64], q: NDArray[np.float64]) -> NDArray[np.float64]:
    """Row-wise Hamilton product of two ``(N, 4)`` arrays."""
    cols = hamilton(tuple(p.T), tuple(q.T))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class Quaternion:
    """``a·e₀ + v1·e₁ + v2·e₂ + v3·e₃`` with ``Fraction`` or ``float`` parts."""

    a: Fraction | float = Fraction(0)
    v1: Fraction | float = Fraction(0)
    v2: Fraction | float = Fraction(0)
    v3: Fraction | float = Fraction(0)

    @classmethod
    def of(cls, parts: Sequence[Fraction | float | int]) -> Quaternion:
        a, v1, v2, v3 = (p if isinstance(p, float) else Fraction(p) for p in parts)
        return cls(a, v1, v2, v3)

    @classmethod
    def basis(cls, index: int) -> Quaternion:
        parts = [0, 0, 0, 0]
        parts[index] = 1
        return cls.of(parts)

    @property
    def parts(self) -> tuple[Part, Part, Part, Part]:
        return (self.a, self.v1, self.v2, self.v3)

    @property
    def scalar(self) -> Fraction | float:
        return self.a

    @property
    def vector(self) -> Quaternion:
        return Quaternion(Fraction(0), self.v1, self.v2, self.v3)

    def as_floats(self) -> tuple[float, float, float, float]:
        a, b, c, d = (float(p) for p in self.parts)
        return (a, b, c, d)

    def __add__(self, other: Quaternion | Fraction | float | int) -> Quaternion:
        o = _coerce(other)
        return Quaternion(*(x + y for x, y in zip(self.parts, o.parts, strict=True)))

    __radd__ = __add__

    def __sub__(self, other: Quaternion | Fraction | float | int) -> Quaternion:
        return self + (-_coerce(other))

    def __rsub__(self, other: Fraction | float | int) -> Quaternion:
        return _coerce(other) - self

    def __neg__(self) -> Quaternion:
        return Quaternion(*(-x for x in self.parts))

    def __mul__(self, other: Quaternion | Fraction | float | int) -> Quaternion:
        return Quaternion(*hamilton(self.parts, _coerce(other).parts))

    def __rmul__(self, other: Fraction | float | int) -> Quaternion:
        return Quaternion(*hamilton(_coerce(other).parts, self.parts))

    def __str__(self) -> str:
        return "(" + ", ".join(str(p) for p in self.parts) + ")"


def _coerce(value: Quaternion | Fraction | float | int) -> Quaternion:
    if isinstance(value, Quaternion):
        return value
    if isinstance(value, int):
        value = Fraction(value)
    zero: Fraction | float = Fraction(0) if isinstance(value, Fraction) else 0.0
    return Quaternion(value, zero, zero, zero)


E0, E1, E2, E3 = (Quaternion.basis(i) for i in range(4))


def quat_mul(p: Quaternion, q: Quaternion) -> Quaternion:
    return p * q


def quat_conj(q: Quaternion) -> Quaternion:
    return Quaternion(q.a, -q.v1, -q.v2, -q.v3)


def quat_norm_sq(q: Quaternion) -> Fraction | float:
    return q.a * q.a + q.v1 * q.v1 + q.v2 * q.v2 + q.v3 * q.v3


def quat_norm(q: Quaternion) -> float:
    return math.sqrt(quat_norm_sq(q))


def quat_inv(q: Quaternion) -> Quaternion:
    """``q⁻¹ = q̄ / |q|²``; exact for ``Fraction`` parts."""
    n = quat_norm_sq(q)
    if n == 0:
        raise ZeroDivisor
    c = quat_conj(q)
    return Quaternion(*(p / n for p in c.parts))


def vector_product_identity(v: Quaternion, w: Quaternion) -> tuple[Part, Quaternion]:
    """``(⟨v, w⟩, v ∧ w)`` for pure quaternions, so that ``vw = -⟨v, w⟩ + v ∧ w``."""
    for q in (v, w):
        if q.a != 0:
            raise NotAVector(q.a)
    dot = v.v1 * w.v1 + v.v2 * w.v2 + v.v3 * w.v3
    cross = Quaternion(
        Fraction(0),
        v.v2 * w.v3 - v.v3 * w.v2,
        v.v3 * w.v1 - v.v1 * w.v3,
        v.v1 * w.v2 - v.v2 * w.v1,
    )
    return dot, cross
