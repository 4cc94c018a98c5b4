"""Outward-rounded interval arithmetic and first-order enclosures.

:class:`Dual` carries an interval value together with interval partial
derivatives; walking an expression with :class:`EnclosureBackend` yields a
certified enclosure of the expression and of its gradient over a box, which
is what the sup-norm certificate needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING

from rbfractal.expr import walk

if TYPE_CHECKING:
    from rbfractal.expr import ExprAst
    from rbfractal.geometry import Box

_TWO_PI = 2 * math.pi


def _down(v: float, steps: int = 1) -> float:
    for _ in range(steps):
        v = math.nextafter(v, -math.inf)
    return v


def _up(v: float, steps: int = 1) -> float:
    for _ in range(steps):
        v = math.nextafter(v, math.inf)
    return v


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    @classmethod
    def point(cls, value: Fraction | float | int) -> Interval:
        f = float(value)
        if isinstance(value, float) or Fraction(f) == value:
            return cls(f, f)
        return cls(_down(f), _up(f))

    @classmethod
    def entire(cls) -> Interval:
        return cls(-math.inf, math.inf)

    @property
    def mag(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    def contains_zero(self) -> bool:
        return self.lo <= 0 <= self.hi

    def __add__(self, other: Interval | float | Fraction) -> Interval:
        o = _iv(other)
        return Interval(_down(self.lo + o.lo), _up(self.hi + o.hi))

    __radd__ = __add__

    def __sub__(self, other: Interval | float | Fraction) -> Interval:
        o = _iv(other)
        return Interval(_down(self.lo - o.hi), _up(self.hi - o.lo))

    def __rsub__(self, other: float | Fraction) -> Interval:
        return _iv(other) - self

    def __neg__(self) -> Interval:
        return Interval(-self.hi, -self.lo)

    def __mul__(self, other: Interval | float | Fraction) -> Interval:
        o = _iv(other)
        products = (self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi)
        if any(math.isnan(p) for p in products):
            return Interval.entire()
        return Interval(_down(min(products)), _up(max(products)))

    __rmul__ = __mul__

    def __truediv__(self, other: Interval | float | Fraction) -> Interval:
        o = _iv(other)
        if o.contains_zero():
            return Interval.entire()
        return self * Interval(_down(1 / o.hi), _up(1 / o.lo))

    def __rtruediv__(self, other: float | Fraction) -> Interval:
        return _iv(other) / self

    def __pow__(self, exponent: Fraction | int) -> Interval:
        p = Fraction(exponent)
        if p.denominator == 1:
            return self._int_pow(int(p))
        if self.lo < 0 or (p < 0 and self.lo <= 0):
            return Interval.entire()
        a, b = math.pow(self.lo, float(p)), math.pow(self.hi, float(p))
        return Interval(_down(min(a, b), 2), _up(max(a, b), 2))

    def _int_pow(self, n: int) -> Interval:
        if n == 0:
            return Interval(1.0, 1.0)
        if n < 0:
            return 1 / self._int_pow(-n)
        a, b = self.lo**n, self.hi**n
        if n % 2 == 1 or self.lo >= 0:
            lo, hi = a, b
        elif self.hi <= 0:
            lo, hi = b, a
        else:
            lo, hi = 0.0, max(a, b)
        return Interval(max(_down(lo, 2), 0.0) if n % 2 == 0 else _down(lo, 2), _up(hi, 2))

    def sqrt(self) -> Interval:
        lo = max(self.lo, 0.0)
        return Interval(max(_down(math.sqrt(lo)), 0.0), _up(math.sqrt(max(self.hi, 0.0))))

    def abs(self) -> Interval:
        if self.lo >= 0:
            return self
        if self.hi <= 0:
            return -self
        return Interval(0.0, max(-self.lo, self.hi))

    def sin(self) -> Interval:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.hi - self.lo >= _TWO_PI:
            return Interval(-1.0, 1.0)
        a, b = math.sin(self.lo), math.sin(self.hi)
        lo, hi = min(a, b), max(a, b)
        if _hits(self, math.pi / 2):
            hi = 1.0
        if _hits(self, -math.pi / 2):
            lo = -1.0
        return Interval(max(_down(lo, 2), -1.0), min(_up(hi, 2), 1.0))

    def cos(self) -> Interval:
        return (self + Interval(_down(math.pi / 2), _up(math.pi / 2))).sin()


def _hits(iv: Interval, phase: float) -> bool:
    """Whether ``phase + 2kπ`` may lie in ``iv`` for some integer ``k`` (over-approximates)."""
    k = math.ceil((iv.lo - phase) / _TWO_PI - 1e-9)
    return phase + k * _TWO_PI <= iv.hi + 1e-9


def _iv(value: Interval | float | Fraction | int) -> Interval:
    return value if isinstance(value, Interval) else Interval.point(value)


# ── Forward-mode enclosures ──────────────────────────────────────────


@dataclass(frozen=True)
class Dual:
    val: Interval
    grad: tuple[Interval, ...]

    def _lift(self, other: Dual | float | Fraction | int) -> Dual:
        if isinstance(other, Dual):
            return other
        return Dual(Interval.point(other), tuple(Interval(0.0, 0.0) for _ in self.grad))

    def __add__(self, other: Dual | float | Fraction | int) -> Dual:
        o = self._lift(other)
        return Dual(self.val + o.val, tuple(a + b for a, b in zip(self.grad, o.grad, strict=True)))

    __radd__ = __add__

    def __sub__(self, other: Dual | float | Fraction | int) -> Dual:
        o = self._lift(other)
        return Dual(self.val - o.val, tuple(a - b for a, b in zip(self.grad, o.grad, strict=True)))

    def __rsub__(self, other: float | Fraction | int) -> Dual:
        return self._lift(other) - self

    def __neg__(self) -> Dual:
        return Dual(-self.val, tuple(-g for g in self.grad))

    def __mul__(self, other: Dual | float | Fraction | int) -> Dual:
        o = self._lift(other)
        grad = tuple(
            a * o.val + self.val * b for a, b in zip(self.grad, o.grad, strict=True)
        )
        return Dual(self.val * o.val, grad)

    __rmul__ = __mul__

    def __truediv__(self, other: Dual | float | Fraction | int) -> Dual:
        o = self._lift(other)
        if o.val.contains_zero():
            return self.entire()
        denom = o.val * o.val
        grad = tuple(
            (a * o.val - self.val * b) / denom for a, b in zip(self.grad, o.grad, strict=True)
        )
        return Dual(self.val / o.val, grad)

    def entire(self) -> Dual:
        return Dual(Interval.entire(), tuple(Interval.entire() for _ in self.grad))

    def chain(self, value: Interval, derivative: Interval) -> Dual:
        return Dual(value, tuple(derivative * g for g in self.grad))


class EnclosureBackend:
    """Expression backend over :class:`Dual` numbers for a box domain."""

    def __init__(self, box: Box) -> None:
        self.dim = box.dim
        self._box = box

    def _zero_grad(self) -> tuple[Interval, ...]:
        return tuple(Interval(0.0, 0.0) for _ in range(self.dim))

    def const(self, value: Fraction | float) -> Dual:
        return Dual(Interval.point(value), self._zero_grad())

    def pi(self) -> Dual:
        return Dual(Interval(_down(math.pi), _up(math.pi)), self._zero_grad())

    def coord(self, axis: int) -> Dual:
        lo, hi = self._box.lo[axis], self._box.hi[axis]
        grad = tuple(
            Interval(1.0, 1.0) if j == axis else Interval(0.0, 0.0) for j in range(self.dim)
        )
        return Dual(Interval(Interval.point(lo).lo, Interval.point(hi).hi), grad)

    def div(self, a: Dual, b: Dual) -> Dual:
        return a / b

    def sin(self, x: Dual) -> Dual:
        return x.chain(x.val.sin(), x.val.cos())

    def cos(self, x: Dual) -> Dual:
        return x.chain(x.val.cos(), -x.val.sin())

    def abs(self, x: Dual) -> Dual:
        if x.val.lo >= 0:
            return x
        if x.val.hi <= 0:
            return -x
        return x.chain(x.val.abs(), Interval(-1.0, 1.0))

    def sqrt(self, x: Dual) -> Dual:
        root = x.val.sqrt()
        if root.lo <= 0:
            return Dual(root, tuple(Interval.entire() for _ in x.grad))
        return x.chain(root, 1 / (2 * root))

    def power(self, base: Dual, exponent: Fraction) -> Dual:
        if exponent == 0:
            return self.const(1)
        value = base.val**exponent
        if not math.isfinite(value.lo) or not math.isfinite(value.hi):
            return base.entire()
        return base.chain(value, exponent * base.val ** (exponent - 1))

    def power_general(self, base: Dual, exponent: Dual) -> Dual:
        return base.entire()


@dataclass(frozen=True)
class Enclosure:
    """Upper bounds on ``|f|`` and on ``‖∂f/∂x_j‖`` over a box."""

    magnitude: float
    lipschitz: tuple[float, ...]


def enclose(ast: ExprAst, box: Box) -> Enclosure:
    """Enclose ``ast`` over the closure of ``box``."""
    result = walk(ast, EnclosureBackend(box))
    parts: tuple[Dual, ...] = result if isinstance(result, tuple) else (result,)
    magnitude = _norm_up([p.val.mag for p in parts])
    lipschitz = tuple(
        _norm_up([p.grad[j].mag for p in parts]) for j in range(box.dim)
    )
    return Enclosure(magnitude, lipschitz)


def _norm_up(values: list[float]) -> float:
    if len(values) == 1:
        return values[0]
    if any(math.isinf(v) or math.isnan(v) for v in values):
        return math.inf
    return _up(math.sqrt(_up(math.fsum(v * v for v in values), 4)), 2)
