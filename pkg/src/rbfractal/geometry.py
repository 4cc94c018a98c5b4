"""Domain boxes, affine maps and partition verification.

Coordinates are stored as ``Fraction`` whenever the input is rational, so
endpoint comparisons on rational data are exact.  Float coordinates fall back
to an absolute tolerance of ``FLOAT_TOL``.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING

import structlog

from rbfractal.errors import DomainError, EmptyFamily, NonInjectiveMap

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

log = structlog.get_logger()

type Scalar = Fraction | float

FLOAT_TOL = 1e-12
SUPPORTED_DIMS = (1, 4)


def as_scalar(value: Scalar | int | str) -> Scalar:
    """Normalise ints and rational strings to ``Fraction``; keep floats."""
    if isinstance(value, float):
        return value
    return Fraction(value)


def is_exact(values: Iterable[Scalar]) -> bool:
    return all(isinstance(v, Fraction) for v in values)


def fmt_scalar(value: Scalar) -> str:
    if isinstance(value, Fraction):
        return str(value.numerator) if value.denominator == 1 else str(value)
    return f"{value:g}"


# ── Box ──────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``∏ [lo_j, hi_j)``, closed on the right where ``closed[j]``."""

    lo: tuple[Scalar, ...]
    hi: tuple[Scalar, ...]
    closed: tuple[bool, ...] = ()

    def __post_init__(self) -> None:
        lo = tuple(as_scalar(v) for v in self.lo)
        hi = tuple(as_scalar(v) for v in self.hi)
        closed = self.closed or (True,) * len(lo)
        if not (len(lo) == len(hi) == len(closed)):
            msg = "lo, hi and closed must have the same length"
            raise DomainError(msg)
        if len(lo) not in SUPPORTED_DIMS:
            msg = f"dimension {len(lo)} is not supported (use 1 or 4)"
            raise DomainError(msg)
        if any(a >= b for a, b in zip(lo, hi, strict=True)):
            msg = f"empty box: lo={lo} hi={hi}"
            raise DomainError(msg)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "closed", tuple(bool(c) for c in closed))

    @classmethod
    def interval(
        cls, lo: Scalar | int | str, hi: Scalar | int | str, *, closed: bool = True
    ) -> Box:
        return cls((as_scalar(lo),), (as_scalar(hi),), (closed,))

    @classmethod
    def cube(cls, dim: int = 4, lo: int = -1, hi: int = 1) -> Box:
        return cls((Fraction(lo),) * dim, (Fraction(hi),) * dim, (True,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def exact(self) -> bool:
        return is_exact(self.lo + self.hi)

    def width(self, axis: int) -> Scalar:
        return self.hi[axis] - self.lo[axis]

    def contains(self, point: Sequence[Scalar], *, closure: bool = False) -> bool:
        if len(point) != self.dim:
            return False
        for x, lo, hi, closed in zip(point, self.lo, self.hi, self.closed, strict=True):
            if x < lo or x > hi:
                return False
            if x == hi and not (closed or closure):
                return False
        return True

    def __str__(self) -> str:
        parts = [
            f"[{fmt_scalar(lo)}, {fmt_scalar(hi)}{']' if c else ')'}"
            for lo, hi, c in zip(self.lo, self.hi, self.closed, strict=True)
        ]
        if len(set(parts)) == 1 and self.dim > 1:
            return f"{parts[0]}^{self.dim}"
        return " x ".join(parts)


# ── Affine maps ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class AffineMap:
    """Componentwise affine map ``l(x)_j = scale_j * x_j + offset_j``."""

    scale: tuple[Scalar, ...]
    offset: tuple[Scalar, ...]

    def __post_init__(self) -> None:
        if len(self.scale) != len(self.offset):
            msg = "scale and offset must have the same length"
            raise DomainError(msg)
        object.__setattr__(self, "scale", tuple(as_scalar(a) for a in self.scale))
        object.__setattr__(self, "offset", tuple(as_scalar(b) for b in self.offset))

    @classmethod
    def line(cls, scale: Scalar | int | str, offset: Scalar | int | str = 0) -> AffineMap:
        return cls((as_scalar(scale),), (as_scalar(offset),))

    @property
    def dim(self) -> int:
        return len(self.scale)

    @property
    def exact(self) -> bool:
        return is_exact(self.scale + self.offset)

    @property
    def lipschitz(self) -> float:
        return float(max(abs(a) for a in self.scale))

    @property
    def jacobian(self) -> Scalar:
        """Absolute Jacobian determinant."""
        det: Scalar = Fraction(1)
        for a in self.scale:
            det = det * abs(a)
        return det

    def __call__(self, point: Sequence[Scalar]) -> tuple[Scalar, ...]:
        return tuple(
            a * x + b for a, x, b in zip(self.scale, point, self.offset, strict=True)
        )

    def image(self, box: Box) -> tuple[tuple[Scalar, ...], tuple[Scalar, ...]]:
        """Closure of ``l(box)`` as ``(lo, hi)``."""
        ends = [sorted((a * lo + b, a * hi + b)) for a, b, lo, hi in self._zip(box)]
        return tuple(e[0] for e in ends), tuple(e[1] for e in ends)

    def _zip(self, box: Box) -> Iterable[tuple[Scalar, Scalar, Scalar, Scalar]]:
        if box.dim != self.dim:
            msg = f"map of dimension {self.dim} applied to a box of dimension {box.dim}"
            raise DomainError(msg)
        return zip(self.scale, self.offset, box.lo, box.hi, strict=True)

    def __str__(self) -> str:
        if self.dim == 1:
            return f"{fmt_scalar(self.scale[0])}*x + {fmt_scalar(self.offset[0])}"
        scale = ", ".join(map(fmt_scalar, self.scale))
        offset = ", ".join(map(fmt_scalar, self.offset))
        return f"diag({scale})*x + ({offset})"


def affine_inverse(m: AffineMap, index: int = 0) -> AffineMap:
    """Return ``m⁻¹``; exact when ``m`` has rational coefficients."""
    if any(a == 0 for a in m.scale):
        raise NonInjectiveMap(index, m.scale)
    scale = tuple(1 / a for a in m.scale)
    offset = tuple(-b / a for a, b in zip(m.scale, m.offset, strict=True))
    return AffineMap(scale, offset)


def cube_partition() -> tuple[AffineMap, ...]:
    """The 16 half-scale maps ``x/2 + c/2``, ``c ∈ {-1, 1}^4``, of ``[-1, 1]^4``."""
    half = Fraction(1, 2)
    return tuple(
        AffineMap((half,) * 4, tuple(half * c for c in corner))
        for corner in itertools.product((-1, 1), repeat=4)
    )


# ── Partition verification ───────────────────────────────────────────


@dataclass(frozen=True)
class PartitionReport:
    disjoint: bool
    covers: bool
    images: tuple[Box, ...]
    lipschitz: tuple[float, ...]
    overlaps: tuple[tuple[int, int], ...] = ()
    exact: bool = True

    @property
    def ok(self) -> bool:
        return self.disjoint and self.covers

    @property
    def contractive(self) -> bool:
        return all(lip < 1 for lip in self.lipschitz)

    @property
    def sorted_images(self) -> tuple[Box, ...]:
        return tuple(sorted(self.images, key=lambda b: tuple(float(v) for v in b.lo)))


@dataclass(frozen=True)
class Partition:
    """A domain together with the ordered maps that decompose it."""

    domain: Box
    maps: tuple[AffineMap, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "maps", tuple(self.maps))

    @property
    def n(self) -> int:
        return len(self.maps)

    @property
    def images(self) -> tuple[Box, ...]:
        return self.report.images

    @property
    def report(self) -> PartitionReport:
        return _cached_report(self)


def _check_family(maps: Sequence[AffineMap]) -> None:
    if not maps:
        raise EmptyFamily
    for i, m in enumerate(maps):
        if any(a == 0 for a in m.scale):
            raise NonInjectiveMap(i, m.scale)


def verify_partition(maps: Sequence[AffineMap], domain: Box) -> PartitionReport:
    """Check that the images ``l_i(domain)`` are pairwise disjoint and cover ``domain``."""
    _check_family(maps)
    return image_report(domain, [(m, domain) for m in maps])


def image_report(domain: Box, pieces: Sequence[tuple[AffineMap, Box]]) -> PartitionReport:
    """Disjointness and coverage of the images ``l_i(X_i)`` inside ``domain``.

    Images follow the half-open convention: closed on the right only where they
    reach a closed right end of the domain.
    """
    exact = domain.exact and all(m.exact and sub.exact for m, sub in pieces)
    tol: Scalar = Fraction(0) if exact else FLOAT_TOL

    images: list[Box] = []
    for m, sub in pieces:
        lo, hi = m.image(sub)
        closed = tuple(
            c and _close(h, dh, tol) for h, dh, c in zip(hi, domain.hi, domain.closed, strict=True)
        )
        images.append(Box(lo, hi, closed))

    overlaps = tuple(
        (i, j)
        for i, j in itertools.combinations(range(len(images)), 2)
        if _interiors_meet(images[i], images[j], tol)
    )
    covers = _covers(domain, images, tol)
    report = PartitionReport(
        disjoint=not overlaps,
        covers=covers,
        images=tuple(images),
        lipschitz=tuple(m.lipschitz for m, _ in pieces),
        overlaps=overlaps,
        exact=exact,
    )
    if overlaps:
        log.info("partition_not_disjoint", overlaps=[(i + 1, j + 1) for i, j in overlaps])
    if not covers:
        log.info("partition_not_covering", domain=str(domain))
    return report


def _close(a: Scalar, b: Scalar, tol: Scalar) -> bool:
    return abs(a - b) <= tol


def _interiors_meet(a: Box, b: Box, tol: Scalar) -> bool:
    return all(
        min(ah, bh) - max(al, bl) > tol
        for al, ah, bl, bh in zip(a.lo, a.hi, b.lo, b.hi, strict=True)
    )


def _covers(domain: Box, images: Sequence[Box], tol: Scalar) -> bool:
    for img in images:
        for lo, hi, dlo, dhi in zip(img.lo, img.hi, domain.lo, domain.hi, strict=True):
            if lo < dlo - tol or hi > dhi + tol:
                return False
    # every cell of the coordinate-compressed grid must sit inside some image
    axes: list[list[float]] = []
    for j in range(domain.dim):
        cuts = {float(domain.lo[j]), float(domain.hi[j])}
        for img in images:
            cuts.update(
                min(max(float(v), float(domain.lo[j])), float(domain.hi[j]))
                for v in (img.lo[j], img.hi[j])
            )
        ordered = sorted(cuts)
        axes.append([(a + b) / 2 for a, b in itertools.pairwise(ordered) if b - a > 0])
    ftol = float(tol)
    for mid in itertools.product(*axes):
        if not any(
            all(
                float(lo) - ftol < x < float(hi) + ftol
                for x, lo, hi in zip(mid, img.lo, img.hi, strict=True)
            )
            for img in images
        ):
            return False
    return True


@functools.lru_cache(maxsize=256)
def _cached_report(partition: Partition) -> PartitionReport:
    return verify_partition(partition.maps, partition.domain)


def dyadic_maps(pieces: int) -> tuple[AffineMap, ...]:
    """``pieces`` equal-width maps ``x/n + (i-1)/n`` of ``[0, 1]``."""
    step = Fraction(1, pieces)
    return tuple(AffineMap.line(step, step * i) for i in range(pieces))
