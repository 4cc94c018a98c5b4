"""Problem configuration files.

A problem is a sectioned INI document read with :mod:`configparser`.  Every
expression value is compiled on load, and diagnostics carry the line and
column of the offending text.  Example::

    [problem]
    mode = global
    domain = [0, 1)

    [maps]
    l1 = 1/3*x
    l2 = 2/3*x + 1/3

    [coefficients]
    q1 = -1
    q2 = x
    s1 = 0.5*sin(x)
    s2 = -2/3*cos(x)

Sections: ``[problem]`` (``name``, ``mode``, ``domain``, ``side``), ``[maps]``
(``l1``… or ``cube = true``), ``[subsets]`` (``X1``…), ``[coefficients]`` (``q1``…,
``s1``…, or ``q``/``s`` for every piece), ``[fif]`` and ``[even_n]`` (``points``,
``s1``…/``s``, ``joins``), ``[schedule]`` (``builtin`` or ``f``/``pieces``/``level1``…),
``[solver]``, ``[checks]`` (``lp``) and ``[export]`` (``csv``, ``svg``, ``projections``).
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import re
from dataclasses import dataclass, field
from enum import StrEnum
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import structlog

from rbfractal.coefficients import DEFAULT_SAMPLES, CoefficientFn
from rbfractal.errors import (
    DomainError,
    IoError,
    ParseError,
    SemanticError,
    UnknownName,
)
from rbfractal.expr import affine_coefficients, constant_value, evaluate, free_of_x, parse_expr
from rbfractal.geometry import AffineMap, Box, cube_partition, dyadic_maps
from rbfractal.nonstationary import InterpolatingSchedule, builtin_names
from rbfractal.quat_operator import parse_axes
from rbfractal.quaternion import Side

if TYPE_CHECKING:
    from rbfractal.expr import ExprAst
    from rbfractal.geometry import Scalar
    from rbfractal.quat_operator import Axis

log = structlog.get_logger()

TERNARY_RESOLUTION = 3**7 + 1
DYADIC_RESOLUTION = 2**10 + 1
CUBE_RESOLUTION = 9

_DOMAIN_RE = re.compile(r"^\[\s*([^,\]]+?)\s*,\s*([^,\]\)]+?)\s*([\]\)])$")
_POINT_RE = re.compile(r"\(\s*([^,()]+?)\s*,\s*([^,()]+?)\s*\)")
_INDEXED_RE = re.compile(r"^([A-Za-z]+)(\d+)$")


class Mode(StrEnum):
    GLOBAL = "global"
    LOCAL = "local"
    NONSTATIONARY = "nonstationary"
    QUATERNION = "quaternion"


# ── Data types ───────────────────────────────────────────────────────


@dataclass(frozen=True)
class SolverParams:
    eps: float = 1e-9
    k_max: int = 200
    resolution: int | None = None
    depth: int = 30
    seed: int = 0
    n_samples: int = DEFAULT_SAMPLES


@dataclass(frozen=True)
class DataSpec:
    """Data points with their scale functions, for ``[fif]`` and ``[even_n]``."""

    points: tuple[tuple[Scalar, Scalar], ...]
    scales: tuple[CoefficientFn, ...]
    joins: tuple[Scalar, ...] | None = None


@dataclass(frozen=True)
class ScheduleSpec:
    builtin: str | None = None
    interpolating: InterpolatingSchedule | None = None


@dataclass(frozen=True)
class ExportSpec:
    csv: str | None = None
    svg: str | None = None
    projections: tuple[tuple[Axis, ...], ...] = ()


@dataclass(frozen=True)
class ProblemConfig:
    name: str
    mode: Mode
    domain: Box
    side: Side = Side.LEFT
    maps: tuple[AffineMap, ...] = ()
    subsets: tuple[Box, ...] = ()
    q: tuple[CoefficientFn, ...] = ()
    s: tuple[CoefficientFn, ...] = ()
    fif: DataSpec | None = None
    even_n: DataSpec | None = None
    schedule: ScheduleSpec | None = None
    solver: SolverParams = field(default_factory=SolverParams)
    lp: tuple[float, ...] = ()
    export: ExportSpec = field(default_factory=ExportSpec)

    @property
    def resolution(self) -> int:
        """Explicit resolution, else 9 on the 4-cube, ``3^7+1`` for ternary maps, ``2^10+1``."""
        if self.solver.resolution is not None:
            return self.solver.resolution
        if self.domain.dim == 4:
            return CUBE_RESOLUTION
        scales = [m.scale[0] for m in self.maps]
        if scales and all(_ternary(a) for a in scales):
            return TERNARY_RESOLUTION
        return DYADIC_RESOLUTION

    def with_overrides(self, **changes: object) -> ProblemConfig:
        """Replace solver parameters that are not ``None``."""
        given = {k: v for k, v in changes.items() if v is not None}
        if not given:
            return self
        solver = dataclasses.replace(self.solver, **given)  # type: ignore[arg-type]
        return dataclasses.replace(self, solver=solver)


def _ternary(a: Scalar) -> bool:
    den = getattr(a, "denominator", None)
    if den is None or den == 1:
        return False
    while den % 3 == 0:
        den //= 3
    return den == 1


# ── Positions ────────────────────────────────────────────────────────


def _positions(text: str) -> dict[tuple[str, str], tuple[int, int]]:
    """``(section, key) → (line, column of the value)``, both 1-based."""
    positions: dict[tuple[str, str], tuple[int, int]] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            continue
        if not stripped or stripped[0] in "#;" or "=" not in raw or raw[0].isspace():
            continue
        key, _, rest = raw.partition("=")
        column = len(key) + 2 + (len(rest) - len(rest.lstrip()))
        positions[(section, key.strip())] = (lineno, column)
    return positions


class _Reader:
    def __init__(self, text: str) -> None:
        self.cfg = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        self.cfg.optionxform = str  # type: ignore[assignment,method-assign]
        try:
            self.cfg.read_string(text)
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            message = exc.message.splitlines()[0] if hasattr(exc, "message") else str(exc)
            raise ParseError(message, 1, line=line) from exc
        self.positions = _positions(text)

    def line(self, section: str, key: str | None = None) -> int | None:
        if key is None:
            lines = (ln for (sec, _), (ln, _) in self.positions.items() if sec == section)
            return next(lines, None)
        return self.positions.get((section, key), (None, 0))[0]

    def has(self, section: str, key: str | None = None) -> bool:
        if key is None:
            return self.cfg.has_section(section)
        return self.cfg.has_option(section, key)

    def get(self, section: str, key: str, default: str | None = None) -> str:
        if self.has(section, key):
            return self.cfg.get(section, key).strip()
        if default is None:
            msg = f"missing key {key!r} in [{section}]"
            raise SemanticError(msg, self.line(section))
        return default

    def keys(self, section: str) -> list[str]:
        return list(self.cfg[section]) if self.has(section) else []

    def expr(self, section: str, key: str, *, quaternion: bool = False) -> ExprAst:
        text = self.get(section, key)
        try:
            return parse_expr(text, quaternion=quaternion)
        except ParseError as exc:
            line, column = self.positions.get((section, key), (0, 1))
            raise exc.at_line(line, column - 1) from exc
        except SemanticError as exc:
            msg = f"[{section}] {key}: {exc.reason}"
            raise SemanticError(msg, self.line(section, key)) from exc

    def number(self, section: str, key: str, text: str | None = None) -> Scalar:
        return _number(text if text is not None else self.get(section, key), self, section, key)

    def indexed(self, section: str, prefix: str) -> dict[int, str]:
        """Keys ``prefix1``, ``prefix2``, … of ``section`` by index."""
        found: dict[int, str] = {}
        for key in self.keys(section):
            m = _INDEXED_RE.match(key)
            if m and m.group(1) == prefix:
                found[int(m.group(2))] = key
        if found and sorted(found) != list(range(1, len(found) + 1)):
            msg = f"[{section}] {prefix}-keys must be numbered 1..{len(found)}"
            raise SemanticError(msg, self.line(section))
        return found


def _number(text: str, reader: _Reader, section: str, key: str) -> Scalar:
    try:
        ast = parse_expr(text)
    except ParseError as exc:
        line, column = reader.positions.get((section, key), (0, 1))
        raise exc.at_line(line, column - 1) from exc
    if not free_of_x(ast):
        msg = f"[{section}] {key}: {text!r} is not a constant"
        raise SemanticError(msg, reader.line(section, key))
    exact = constant_value(ast)
    if exact is not None:
        return exact
    return float(evaluate(ast, np.zeros((1, 1)))[0])


# ── Sections ─────────────────────────────────────────────────────────


def _domain(reader: _Reader) -> Box:
    text = reader.get("problem", "domain", "[0, 1]")
    if text == "cube":
        return Box.cube()
    m = _DOMAIN_RE.match(text)
    if not m:
        msg = f"domain must look like [a, b], [a, b) or cube, got {text!r}"
        raise SemanticError(msg, reader.line("problem", "domain"))
    lo = reader.number("problem", "domain", m.group(1))
    hi = reader.number("problem", "domain", m.group(2))
    try:
        return Box.interval(lo, hi, closed=m.group(3) == "]")
    except DomainError as exc:
        raise SemanticError(exc.reason, reader.line("problem", "domain")) from exc


def _maps(reader: _Reader, domain: Box) -> tuple[AffineMap, ...]:
    if reader.get("maps", "cube", "false").lower() == "true":
        if domain.dim != 4:
            msg = "cube = true needs domain = cube"
            raise SemanticError(msg, reader.line("maps", "cube"))
        return cube_partition()
    if reader.has("maps", "dyadic"):
        return dyadic_maps(int(reader.number("maps", "dyadic")))
    maps = []
    for _, key in sorted(reader.indexed("maps", "l").items()):
        ast = reader.expr("maps", key)
        try:
            a, b = affine_coefficients(ast)
        except SemanticError as exc:
            raise SemanticError(exc.reason, reader.line("maps", key)) from exc
        maps.append(AffineMap.line(a, b))
    if not maps:
        msg = "no maps given (l1 = ..., dyadic = n or cube = true)"
        raise SemanticError(msg, reader.line("maps"))
    return tuple(maps)


def _coefficients(
    reader: _Reader, prefix: str, n: int, domains: list[Box], *, quaternion: bool
) -> tuple[CoefficientFn, ...]:
    indexed = reader.indexed("coefficients", prefix)
    out = []
    for i in range(1, n + 1):
        key = indexed.get(i, prefix)
        if not reader.has("coefficients", key):
            msg = f"missing {prefix}{i} (or {prefix} for every piece) in [coefficients]"
            raise SemanticError(msg, reader.line("coefficients"))
        ast = reader.expr("coefficients", key, quaternion=quaternion)
        out.append(CoefficientFn(ast, domains[i - 1], source=reader.get("coefficients", key)))
    if len(indexed) > n:
        msg = f"{len(indexed)} {prefix}-coefficients for {n} maps"
        raise SemanticError(msg, reader.line("coefficients"))
    return tuple(out)


def _subsets(reader: _Reader, n: int) -> tuple[Box, ...]:
    indexed = reader.indexed("subsets", "X")
    if len(indexed) != n:
        msg = f"local mode needs X1..X{n} in [subsets], got {len(indexed)}"
        raise SemanticError(msg, reader.line("subsets") or reader.line("problem"))
    boxes = []
    for i in range(1, n + 1):
        key = indexed[i]
        m = _DOMAIN_RE.match(reader.get("subsets", key))
        if not m:
            msg = f"{key} must look like [a, b]"
            raise SemanticError(msg, reader.line("subsets", key))
        lo = reader.number("subsets", key, m.group(1))
        hi = reader.number("subsets", key, m.group(2))
        boxes.append(Box.interval(lo, hi, closed=m.group(3) == "]"))
    return tuple(boxes)


def _data(reader: _Reader, section: str, domain: Box) -> DataSpec:
    text = reader.get(section, "points")
    pairs = _POINT_RE.findall(text)
    if len(pairs) < 2:
        msg = "points must list at least two (x, y) pairs"
        raise SemanticError(msg, reader.line(section, "points"))
    points = tuple(
        (reader.number(section, "points", x), reader.number(section, "points", y))
        for x, y in pairs
    )
    indexed = reader.indexed(section, "s")
    keys = [indexed[i] for i in sorted(indexed)] or ["s"]
    scales = tuple(
        CoefficientFn(reader.expr(section, key), domain, source=reader.get(section, key))
        for key in keys
    )
    joins = None
    if reader.has(section, "joins"):
        joins = tuple(
            reader.number(section, "joins", part)
            for part in reader.get(section, "joins").split(",")
        )
    return DataSpec(points, scales, joins)


def _schedule(reader: _Reader) -> ScheduleSpec:
    if reader.has("schedule", "builtin"):
        name = reader.get("schedule", "builtin")
        if name not in builtin_names()[1]:
            raise UnknownName(name, builtin_names()[1])
        return ScheduleSpec(builtin=name)
    unit = Box.interval(0, 1)
    f = CoefficientFn(reader.expr("schedule", "f"), unit, source=reader.get("schedule", "f"))
    pieces = int(reader.number("schedule", "pieces", reader.get("schedule", "pieces", "2")))
    levels = reader.indexed("schedule", "level")
    if not levels:
        msg = "an interpolating schedule needs level1 = <scale> (level2, ... optional)"
        raise SemanticError(msg, reader.line("schedule"))
    scales = []
    for _, key in sorted(levels.items()):
        c = CoefficientFn(reader.expr("schedule", key), unit, source=reader.get("schedule", key))
        scales.append((c,) * pieces)
    maps = dyadic_maps(pieces)
    spec = InterpolatingSchedule(f, (maps,) * len(scales), tuple(scales))
    return ScheduleSpec(interpolating=spec)


def _solver(reader: _Reader) -> SolverParams:
    defaults = SolverParams()
    if not reader.has("solver"):
        return defaults
    values: dict[str, object] = {}
    for key in reader.keys("solver"):
        if key not in {f.name for f in dataclasses.fields(SolverParams)}:
            raise UnknownName(key, [f.name for f in dataclasses.fields(SolverParams)])
        number = reader.number("solver", key)
        values[key] = float(number) if key == "eps" else int(number)
    return dataclasses.replace(defaults, **values)  # type: ignore[arg-type]


def _lp(reader: _Reader) -> tuple[float, ...]:
    if not reader.has("checks", "lp"):
        return ()
    out = []
    for part in reader.get("checks", "lp").split(","):
        token = part.strip()
        out.append(math.inf if token == "inf" else float(reader.number("checks", "lp", token)))
    return tuple(out)


def _export(reader: _Reader) -> ExportSpec:
    if not reader.has("export"):
        return ExportSpec()
    projections = ()
    if reader.has("export", "projections"):
        projections = tuple(
            parse_axes(group) for group in reader.get("export", "projections").split(";")
        )
    return ExportSpec(
        csv=reader.get("export", "csv", "") or None,
        svg=reader.get("export", "svg", "") or None,
        projections=projections,
    )


# ── Entry points ─────────────────────────────────────────────────────


def parse_config(text: str) -> ProblemConfig:
    reader = _Reader(text)
    if not reader.has("problem"):
        msg = "missing [problem] section"
        raise SemanticError(msg, 1)
    mode_text = reader.get("problem", "mode", "global")
    try:
        mode = Mode(mode_text)
    except ValueError:
        raise UnknownName(mode_text, list(Mode)) from None
    side_text = reader.get("problem", "side", "left")
    try:
        side = Side(side_text)
    except ValueError:
        raise UnknownName(side_text, list(Side)) from None
    domain = _domain(reader)
    config = ProblemConfig(
        name=reader.get("problem", "name", "problem"),
        mode=mode,
        domain=domain,
        side=side,
        solver=_solver(reader),
        lp=_lp(reader),
        export=_export(reader),
    )

    if mode is Mode.NONSTATIONARY:
        if not reader.has("schedule"):
            msg = "nonstationary mode needs a [schedule] section"
            raise SemanticError(msg, reader.line("problem"))
        return dataclasses.replace(config, schedule=_schedule(reader))
    if mode is Mode.GLOBAL and reader.has("fif"):
        return dataclasses.replace(config, fif=_data(reader, "fif", domain))
    if mode is Mode.LOCAL and reader.has("even_n"):
        return dataclasses.replace(config, even_n=_data(reader, "even_n", Box.interval(0, 1)))

    maps = _maps(reader, domain)
    if mode is Mode.LOCAL:
        subsets = _subsets(reader, len(maps))
    else:
        if reader.has("subsets"):
            msg = f"[subsets] is only meaningful in local mode, not {mode}"
            raise SemanticError(msg, reader.line("subsets"))
        subsets = (domain,) * len(maps)
    quaternion = mode is Mode.QUATERNION
    q = _coefficients(reader, "q", len(maps), list(subsets), quaternion=quaternion)
    s = _coefficients(reader, "s", len(maps), list(subsets), quaternion=quaternion)
    log.debug("config_parsed", name=config.name, mode=str(mode), maps=len(maps))
    return dataclasses.replace(config, maps=maps, subsets=subsets, q=q, s=s)


def builtin_configs() -> list[str]:
    """Names of the example problems shipped with the package."""
    root = resources.files("rbfractal") / "configs"
    return sorted(p.name.removesuffix(".ini") for p in root.iterdir() if p.name.endswith(".ini"))


def read_config_text(ref: str | Path) -> str:
    """Text of a config file, or of the shipped example called ``ref``."""
    path = Path(ref)
    if path.is_file():
        try:
            return path.read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(str(path), exc.strerror or str(exc)) from exc
    name = str(ref)
    if name in builtin_configs():
        return (resources.files("rbfractal") / "configs" / f"{name}.ini").read_text(
            encoding="utf-8"
        )
    raise IoError(str(path), "no such file or shipped example")


def load_config(ref: str | Path) -> ProblemConfig:
    return parse_config(read_config_text(ref))
