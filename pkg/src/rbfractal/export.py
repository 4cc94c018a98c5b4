"""CSV and SVG artifacts."""

from __future__ import annotations

import csv
import io
from typing import TYPE_CHECKING

import numpy as np
import structlog
from matplotlib import rc_context
from matplotlib.figure import Figure

from rbfractal.errors import IoError, ShapeMismatch

if TYPE_CHECKING:
    from collections.abc import Sequence
    from pathlib import Path

    from numpy.typing import ArrayLike, NDArray

    from rbfractal.grid import GridFunction
    from rbfractal.quat_operator import Axis

log = structlog.get_logger()

CANVAS_PX = (800, 480)
DPI = 100

_SVG_RC = {
    "svg.hashsalt": "rbfractal",
    "svg.fonttype": "none",
    "path.simplify": False,
}


# ── Tables ───────────────────────────────────────────────────────────


def grid_table(psi: GridFunction) -> tuple[list[str], NDArray[np.float64]]:
    """Header and rows of a grid function in node order."""
    if psi.domain.dim == 1:
        coords = ["x"]
    else:
        coords = [f"x_{j}" for j in range(psi.domain.dim)]
    values = ["psi"] if psi.value_dim == 1 else [f"psi_{j}" for j in range(psi.value_dim)]
    return coords + values, np.column_stack([psi.nodes, psi.values])


def projection_table(
    columns: NDArray[np.float64], axes: Sequence[Axis]
) -> tuple[list[str], NDArray[np.float64]]:
    """``x,psi_i`` for graph projections, ``a,b`` / ``a,b,c`` for parametric curves."""
    if columns.ndim != 2 or columns.shape[1] != len(axes):
        msg = f"{len(axes)} axes for a table of shape {columns.shape}"
        raise ShapeMismatch(msg)
    if axes[0] == "x":
        header = ["x", *(f"psi_{a}" for a in axes[1:])]
    else:
        header = list("abc"[: len(axes)])
    return header, columns


def format_csv(header: Sequence[str], rows: ArrayLike) -> str:
    """Header line then one row per line; floats in shortest round-trip form, LF endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in np.asarray(rows, dtype=np.float64):
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def export_csv(header: Sequence[str], rows: ArrayLike, path: Path) -> Path:
    text = format_csv(header, rows)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise IoError(str(path), exc.strerror or str(exc)) from exc
    log.info("artifact_written", path=str(path), rows=text.count("\n") - 1)
    return path


# ── SVG ──────────────────────────────────────────────────────────────


def render_svg(series: ArrayLike, *, title: str = "", stroke_width: float = 0.8) -> bytes:
    """One polyline on an 800×480 canvas with an axis box and min/max tick labels."""
    points = np.asarray(series, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0 or points.shape[1] < 2:
        msg = f"series must be a nonempty (N, 2) array, got shape {points.shape}"
        raise ShapeMismatch(msg)
    xs, ys = points[:, 0], points[:, 1]

    with rc_context(_SVG_RC):
        fig = Figure(figsize=(CANVAS_PX[0] / DPI, CANVAS_PX[1] / DPI), dpi=DPI)
        ax = fig.add_subplot()
        ax.plot(xs, ys, color="black", linewidth=stroke_width)
        ax.set_xticks([xs.min(), xs.max()])
        ax.set_yticks([ys.min(), ys.max()])
        ax.set_xticklabels([f"{xs.min():.4g}", f"{xs.max():.4g}"])
        ax.set_yticklabels([f"{ys.min():.4g}", f"{ys.max():.4g}"])
        if title:
            ax.set_title(title)
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def export_svg(
    series: ArrayLike, path: Path, *, title: str = "", stroke_width: float = 0.8
) -> Path:
    try:
        data = render_svg(series, title=title, stroke_width=stroke_width)
    except ShapeMismatch as exc:
        raise IoError(str(path), str(exc)) from exc
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise IoError(str(path), exc.strerror or str(exc)) from exc
    log.info("artifact_written", path=str(path), points=len(np.asarray(series)))
    return path
