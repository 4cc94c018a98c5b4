"""Uniformly sampled functions on a box."""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING

import numpy as np

from rbfractal.errors import DomainError, EvalError, GridTooLarge, ShapeMismatch
from rbfractal.geometry import as_scalar

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from numpy.typing import NDArray

    from rbfractal.coefficients import CoefficientFn
    from rbfractal.geometry import Box, Scalar

MAX_NODES_4D = 33

# distance below which a fractional grid coordinate counts as a node
NODE_SNAP = 1e-9

type GridValue = float | tuple[float, ...]


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values at the ``resolution**dim`` nodes of ``domain``, shape ``(nodes, value_dim)``.

    Nodes are ordered like ``np.meshgrid(..., indexing="ij")`` flattened in C order
    and include the right end of every axis, whether or not the domain is closed
    there.
    """

    domain: Box
    resolution: int
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        check_resolution(self.domain, self.resolution)
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        expected = self.resolution**self.domain.dim
        if values.ndim != 2 or values.shape[0] != expected:
            msg = f"expected {expected} node values, got array of shape {values.shape}"
            raise ShapeMismatch(msg)
        if not np.all(np.isfinite(values)):
            msg = "grid values must be finite"
            raise EvalError(msg)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(
        cls, domain: Box, resolution: int, value: float | Sequence[float] = 0.0
    ) -> GridFunction:
        row = np.atleast_1d(np.asarray(value, dtype=np.float64))
        return cls(domain, resolution, np.tile(row, (resolution**domain.dim, 1)))

    @classmethod
    def from_fn(
        cls,
        domain: Box,
        resolution: int,
        fn: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    ) -> GridFunction:
        return cls(domain, resolution, fn(grid_nodes(domain, resolution)))

    @classmethod
    def from_coefficient(cls, c: CoefficientFn, resolution: int) -> GridFunction:
        return cls.from_fn(c.domain, resolution, c.values)

    @property
    def value_dim(self) -> int:
        return int(self.values.shape[1])

    @property
    def nodes(self) -> NDArray[np.float64]:
        return grid_nodes(self.domain, self.resolution)

    def spacing(self, axis: int = 0) -> Scalar:
        return self.domain.width(axis) / (self.resolution - 1)


def check_resolution(domain: Box, resolution: int) -> None:
    if resolution < 2:
        msg = f"resolution must be at least 2, got {resolution}"
        raise DomainError(msg)
    if domain.dim == 4 and resolution > MAX_NODES_4D:
        raise GridTooLarge(resolution, domain.dim, MAX_NODES_4D)


def node_coordinates(domain: Box, resolution: int, axis: int) -> tuple[Scalar, ...]:
    """Exact coordinates of the nodes along ``axis``."""
    lo, width = domain.lo[axis], domain.width(axis)
    last = resolution - 1
    if isinstance(width, Fraction) and isinstance(lo, Fraction):
        return tuple(lo + width * Fraction(j, last) for j in range(resolution))
    return tuple(float(lo) + float(width) * j / last for j in range(resolution))


@functools.lru_cache(maxsize=64)
def grid_nodes(domain: Box, resolution: int) -> NDArray[np.float64]:
    """Node coordinates as a read-only ``(resolution**dim, dim)`` array."""
    check_resolution(domain, resolution)
    axes = [
        np.array([float(v) for v in node_coordinates(domain, resolution, j)])
        for j in range(domain.dim)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    nodes.flags.writeable = False
    return nodes


def interpolate(
    values: NDArray[np.float64],
    resolution: int,
    base: NDArray[np.intp],
    frac: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Multilinear interpolation between the ``2**dim`` nodes around each query.

    ``base`` holds lower-corner node indices in ``[0, resolution - 2]`` and
    ``frac`` the offsets in ``[0, 1]``, both of shape ``(N, dim)``.  Queries with
    ``frac`` exactly 0 or 1 reproduce node values bit for bit.
    """
    dim = base.shape[1]
    shape = (resolution,) * dim
    out = np.zeros((base.shape[0], values.shape[1]))
    for corner in itertools.product((0, 1), repeat=dim):
        bits = np.array(corner, dtype=np.intp)
        weight = np.prod(np.where(bits == 1, frac, 1.0 - frac), axis=1)
        index = np.ravel_multi_index(tuple((base + bits).T), shape)
        out += weight[:, None] * values[index]
    return out


def grid_coordinates(
    domain: Box, resolution: int, points: NDArray[np.float64]
) -> tuple[NDArray[np.intp], NDArray[np.float64]]:
    """Lower-corner indices and offsets of ``points`` in the node lattice."""
    lo = np.array([float(v) for v in domain.lo])
    width = np.array([float(w) for w in map(domain.width, range(domain.dim))])
    u = (points - lo) / width * (resolution - 1)
    nearest = np.rint(u)
    u = np.where(np.abs(u - nearest) < NODE_SNAP, nearest, u)
    u = np.clip(u, 0.0, resolution - 1)
    base = np.clip(np.floor(u), 0, resolution - 2).astype(np.intp)
    return base, u - base


def grid_eval(f: GridFunction, x: Scalar | Sequence[Scalar]) -> GridValue:
    """Value of ``f`` at ``x``: a float for real grids, a tuple otherwise."""
    point = (as_scalar(x),) if isinstance(x, int | float | Fraction) else tuple(x)
    if not f.domain.contains(point, closure=True):
        msg = f"{point} lies outside {f.domain}"
        raise DomainError(msg, [float(v) for v in point])
    query = np.array([[float(v) for v in point]], dtype=np.float64)
    base, frac = grid_coordinates(f.domain, f.resolution, query)
    row = interpolate(f.values, f.resolution, base, frac)[0]
    if f.value_dim == 1:
        return float(row[0])
    return tuple(float(v) for v in row)


def _check_shapes(f: GridFunction, g: GridFunction) -> None:
    if f.domain != g.domain:
        msg = f"domains differ: {f.domain} vs {g.domain}"
        raise ShapeMismatch(msg)
    if f.resolution != g.resolution:
        msg = f"resolutions differ: {f.resolution} vs {g.resolution}"
        raise ShapeMismatch(msg)
    if f.value_dim != g.value_dim:
        msg = f"value dimensions differ: {f.value_dim} vs {g.value_dim}"
        raise ShapeMismatch(msg)


def sup_distance(f: GridFunction, g: GridFunction) -> float:
    """``max`` over nodes of the Euclidean norm of ``f - g``."""
    _check_shapes(f, g)
    return float(np.max(np.linalg.norm(f.values - g.values, axis=1)))


def sup_norm(f: GridFunction) -> float:
    return float(np.max(np.linalg.norm(f.values, axis=1)))
