"""Exception hierarchy.

Library code raises these; only the CLI maps them to exit codes
(``CertificationError`` → 1, ``ConfigError`` and ``IoError`` → 2).
"""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from rbfractal.reports import FixedPointResult


class RBError(Exception):
    """Base class for every error raised by ``rbfractal``."""


# ── Geometry and evaluation ──────────────────────────────────────────


class NonInjectiveMap(RBError):
    """An affine map has a zero scale component."""

    def __init__(self, index: int, scale: Sequence[object]) -> None:
        super().__init__(f"map {index + 1} is not injective (scale {list(scale)})")
        self.index = index
        self.scale = tuple(scale)


class EmptyFamily(RBError):
    def __init__(self) -> None:
        super().__init__("the map family is empty")


class DomainError(RBError):
    """A point or a parameter lies outside the admissible domain."""

    def __init__(self, reason: str, point: Sequence[float] | None = None) -> None:
        super().__init__(reason)
        self.reason = reason
        self.point = tuple(point) if point is not None else None


class PartitionGap(RBError):
    """A point lies in no image of the partition."""

    def __init__(self, point: Sequence[float]) -> None:
        super().__init__(f"point {tuple(point)} lies in no partition image")
        self.point = tuple(point)


class EndpointMismatch(RBError):
    """An interpolating level does not pin the interval endpoints."""

    def __init__(self, level: int, endpoint: float, image: float) -> None:
        super().__init__(f"level {level}: endpoint {endpoint} is mapped to {image}")
        self.level = level
        self.endpoint = endpoint
        self.image = image


class EvalError(RBError):
    """An expression could not be evaluated (division by zero, non-finite value, ...)."""


class ShapeMismatch(RBError):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class ZeroDivisor(RBError):
    def __init__(self) -> None:
        super().__init__("the zero quaternion has no inverse")


class NotAVector(RBError):
    """A quaternion expected to be pure imaginary has a scalar part."""

    def __init__(self, scalar: object) -> None:
        super().__init__(f"expected a vector quaternion, scalar part is {scalar}")
        self.scalar = scalar


class BadAxis(RBError):
    def __init__(self, axis: object) -> None:
        super().__init__(f"invalid projection axis {axis!r}; use 0..3 or 'x'")
        self.axis = axis


class GridTooLarge(RBError):
    def __init__(self, resolution: int, dim: int, cap: int) -> None:
        super().__init__(f"{resolution}^{dim} nodes exceed the cap of {cap} nodes per dimension")
        self.resolution = resolution
        self.dim = dim
        self.cap = cap


# ── Certification failures (exit 1) ──────────────────────────────────


class CertificationError(RBError):
    """A contraction, convergence or join-up certificate could not be issued."""


class NotContractive(CertificationError):
    def __init__(self, factor: float, guard: float = 1e-12) -> None:
        super().__init__(f"contraction factor {factor:.12g} is not below 1 - {guard:g}")
        self.factor = factor
        self.guard = guard


class ScaleTooLarge(CertificationError):
    def __init__(self, index: int, bound: float) -> None:
        super().__init__(f"scale {index + 1} has sup-bound {bound:.12g} >= 1")
        self.index = index
        self.bound = bound


class DegenerateScale(CertificationError):
    """``1 - s`` is not invertible at an endpoint."""

    def __init__(self, point: float) -> None:
        super().__init__(f"1 - s is singular at x = {point}")
        self.point = point


class InconsistentJoinUp(CertificationError):
    def __init__(self, residual: float, location: str = "") -> None:
        where = f" at {location}" if location else ""
        super().__init__(f"join-up conditions violated{where} (residual {residual:.3e})")
        self.residual = residual
        self.location = location


class OutsideInvariantBall(CertificationError):
    def __init__(self, norm: float, radius: float) -> None:
        super().__init__(f"initial function norm {norm:.6g} exceeds invariant radius {radius:.6g}")
        self.norm = norm
        self.radius = radius


class MaxIterations(CertificationError):
    """Iteration stopped at ``k_max`` before the a-priori bound reached ``eps``."""

    def __init__(self, result: FixedPointResult, eps: float) -> None:
        super().__init__(
            f"a-priori bound {result.apriori_bound:.3e} > eps {eps:g} "
            f"after {result.iterations} iterations"
        )
        self.result = result
        self.eps = eps


# ── Input errors (exit 2) ────────────────────────────────────────────


class ConfigError(RBError):
    """Base class for problems with user input."""


class ParseError(ConfigError):
    """Syntax error with a 1-based position and the set of expected tokens."""

    def __init__(
        self,
        message: str,
        column: int,
        expected: Iterable[str] = (),
        line: int | None = None,
    ) -> None:
        self.message = message
        self.column = column
        self.line = line
        self.expected = frozenset(expected)
        super().__init__(self._render())

    def _render(self) -> str:
        where = f"line {self.line}, column {self.column}" if self.line else f"column {self.column}"
        hint = f" (expected {', '.join(sorted(self.expected))})" if self.expected else ""
        return f"{where}: {self.message}{hint}"

    def at_line(self, line: int, column_offset: int) -> ParseError:
        """Relocate an expression-relative error into config coordinates."""
        return ParseError(self.message, self.column + column_offset, self.expected, line)


class SemanticError(ConfigError):
    def __init__(self, reason: str, line: int | None = None) -> None:
        super().__init__(f"line {line}: {reason}" if line else reason)
        self.reason = reason
        self.line = line


class UnknownName(ConfigError):
    def __init__(self, name: str, choices: Iterable[str]) -> None:
        self.choices = tuple(sorted(choices))
        super().__init__(f"unknown name {name!r}; choose one of {', '.join(self.choices)}")
        self.name = name


class UnsortedData(ConfigError):
    def __init__(self, index: int) -> None:
        super().__init__(f"data abscissae are not strictly increasing at point {index}")
        self.index = index


class IoError(RBError):
    """An artifact could not be written."""

    def __init__(self, path: str, reason: str) -> None:
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason
