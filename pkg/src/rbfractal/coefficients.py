"""Coefficient functions ``q_i`` and ``s_i`` with certified sup-norm bounds."""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING

import numpy as np
import structlog

from rbfractal.errors import DomainError
from rbfractal.expr import const, constant_value, evaluate, free_of_x, parse_expr, value_dim
from rbfractal.geometry import Box, as_scalar
from rbfractal.interval import enclose
from rbfractal.quaternion import Quaternion

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from rbfractal.expr import ExprAst
    from rbfractal.geometry import Scalar

log = structlog.get_logger()

DEFAULT_SAMPLES = 4097

# sub-boxes used for the Lipschitz enclosure of 1-D coefficients
_CELLS = 64


@dataclass(frozen=True)
class CoefficientFn:
    """An expression ``body`` viewed as a function on ``domain``."""

    body: ExprAst
    domain: Box
    source: str = field(default="", compare=False)

    @classmethod
    def parse(cls, text: str, domain: Box, *, quaternion: bool = False) -> CoefficientFn:
        return cls(parse_expr(text, quaternion=quaternion), domain, source=text)

    @classmethod
    def constant(cls, value: Scalar | int, domain: Box) -> CoefficientFn:
        return cls(const(value), domain, source=str(value))

    @property
    def value_dim(self) -> int:
        return value_dim(self.body, self.domain.dim)

    @property
    def exact_constant(self) -> Fraction | None:
        """The value of a rational real constant, else ``None``."""
        if not free_of_x(self.body):
            return None
        return constant_value(self.body)

    def on(self, domain: Box) -> CoefficientFn:
        """The same expression on another domain."""
        return dataclasses.replace(self, domain=domain)

    def values(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        """Vectorised values at ``points`` of shape ``(N, dim)``."""
        return evaluate(self.body, points)

    @functools.cached_property
    def sup_bound(self) -> float:
        return certify_sup_bound(self, DEFAULT_SAMPLES)

    def __str__(self) -> str:
        return self.source or repr(self.body)


def eval_coefficient(c: CoefficientFn, x: Scalar | Sequence[Scalar]) -> float | Quaternion:
    """Evaluate ``c`` at one point of the closure of its domain."""
    point = _as_point(x)
    if not c.domain.contains(point, closure=True):
        msg = f"x = {_fmt_point(point)} lies outside {c.domain}"
        raise DomainError(msg, [float(v) for v in point])
    row = c.values(np.array([[float(v) for v in point]], dtype=np.float64))
    if row.ndim == 2:
        a, v1, v2, v3 = (float(p) for p in row[0])
        return Quaternion(a, v1, v2, v3)
    return float(row[0])


def certify_sup_bound(c: CoefficientFn, n_samples: int) -> float:
    """Upper bound on ``sup |c|`` over the closure of ``c.domain``.

    The sampled maximum is inflated by ``Σ_j L_j h_j / 2`` where ``L_j`` bounds
    ``‖∂c/∂x_j‖`` by interval arithmetic and ``h_j`` is the sample spacing.  When
    no finite Lipschitz bound exists the interval enclosure of ``|c|`` is used.
    """
    if n_samples < 2:
        msg = f"n_samples must be at least 2, got {n_samples}"
        raise DomainError(msg)

    exact = c.exact_constant
    if exact is not None:
        return float(abs(exact))

    points, spacing = _samples(c.domain, n_samples)
    values = c.values(points)
    norms = np.abs(values) if values.ndim == 1 else np.linalg.norm(values, axis=1)
    sampled = float(np.max(norms))

    magnitude, lipschitz = _enclosure(c)
    slack = math.fsum(lip * h / 2 for lip, h in zip(lipschitz, spacing, strict=True))
    if math.isfinite(slack):
        # one ulp covers the rounding of the sampled norm itself
        bound = math.nextafter(sampled + slack, math.inf)
    else:
        bound = max(magnitude, sampled)
    log.debug(
        "sup_bound_certified",
        coefficient=str(c),
        sampled=sampled,
        slack=slack,
        enclosure=magnitude,
        bound=bound,
    )
    return bound


def _samples(domain: Box, n: int) -> tuple[NDArray[np.float64], tuple[float, ...]]:
    if domain.dim == 1:
        per_axis = n
    else:
        per_axis = max(2, round(n ** (1 / domain.dim)))
    axes = [
        np.linspace(float(lo), float(hi), per_axis)
        for lo, hi in zip(domain.lo, domain.hi, strict=True)
    ]
    spacing = tuple(float(w) / (per_axis - 1) for w in map(domain.width, range(domain.dim)))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1), spacing


def _enclosure(c: CoefficientFn) -> tuple[float, tuple[float, ...]]:
    """Magnitude and per-axis derivative bounds, refined over sub-boxes in 1-D."""
    if c.domain.dim != 1:
        e = enclose(c.body, c.domain)
        return e.magnitude, e.lipschitz
    lo, hi = c.domain.lo[0], c.domain.hi[0]
    step = (hi - lo) / _CELLS
    magnitude, lipschitz = 0.0, 0.0
    for i in range(_CELLS):
        a = lo + step * i
        b = hi if i == _CELLS - 1 else lo + step * (i + 1)
        e = enclose(c.body, Box((a,), (b,)))
        magnitude = max(magnitude, e.magnitude)
        lipschitz = max(lipschitz, e.lipschitz[0])
    return magnitude, (lipschitz,)


def _as_point(x: Scalar | int | Sequence[Scalar]) -> tuple[Scalar, ...]:
    if isinstance(x, int | float | Fraction):
        return (as_scalar(x),)
    return tuple(as_scalar(v) for v in x)


def _fmt_point(point: Sequence[Scalar]) -> str:
    if len(point) == 1:
        return str(point[0])
    return "(" + ", ".join(str(v) for v in point) + ")"
