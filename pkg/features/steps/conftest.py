"""Shared fixtures and step definitions for BDD step implementations."""

from __future__ import annotations

import re
from typing import TYPE_CHECKING, Any

import numpy as np
import pytest
from pytest_bdd import given, parsers, then

from rbfractal.coefficients import CoefficientFn
from rbfractal.config import load_config
from rbfractal.geometry import AffineMap, Box, Partition
from rbfractal.rb_global import RBOperator
from rbfractal.runner import build_operator

if TYPE_CHECKING:
    from rbfractal.config import ProblemConfig
    from rbfractal.runner import Operator

_DOMAIN_RE = re.compile(r"^\[\s*(.+?)\s*,\s*(.+?)\s*([\]\)])$")


# ── Fixtures ────────────────────────────────────────────────────────


@pytest.fixture()
def context() -> dict[str, Any]:
    """A mutable bag for sharing data across Given/When/Then steps."""
    return {}


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def parse_table(datatable: list[list[str]]) -> list[dict[str, str]]:
    """Convert pytest-bdd datatable (list of lists) to list of dicts."""
    headers = datatable[0]
    return [dict(zip(headers, row, strict=False)) for row in datatable[1:]]


def parse_domain(text: str) -> Box:
    """``"[0, 1)"`` → half-open box, ``"[0, 1]"`` → closed box, ``"cube"`` → ``[-1, 1]^4``."""
    if text == "cube":
        return Box.cube()
    m = _DOMAIN_RE.match(text)
    assert m, f"bad domain {text!r}"
    return Box.interval(m.group(1), m.group(2), closed=m.group(3) == "]")


def global_operator(
    domain: Box, maps: list[tuple[str, str]], q: list[str], s: list[str]
) -> RBOperator:
    """An operator from ``(scale, offset)`` pairs and coefficient expressions."""
    partition = Partition(domain, tuple(AffineMap.line(a, b) for a, b in maps))
    return RBOperator(
        partition,
        tuple(CoefficientFn.parse(e, domain) for e in q),
        tuple(CoefficientFn.parse(e, domain) for e in s),
    )


def random_operator(rng: np.random.Generator, *, exact: bool = False) -> RBOperator:
    """A contractive operator on ``[0, 1)`` with 2-4 random pieces.

    The cut points are dyadic and, with ``exact``, the scales and ``q`` are
    rational constants so that every node value is exact in binary floating point.
    """
    n = int(rng.integers(2, 5))
    inner = sorted(rng.choice(np.arange(1, 16), size=n - 1, replace=False))
    cuts = [0, *(int(c) for c in inner), 16]
    domain = Box.interval(0, 1, closed=False)
    maps, q, s = [], [], []
    for lo, hi in zip(cuts, cuts[1:], strict=False):
        maps.append(AffineMap.line(f"{hi - lo}/16", f"{lo}/16"))
        scale = int(rng.integers(-7, 8))
        if exact:
            q.append(CoefficientFn.parse(f"{int(rng.integers(-8, 9))}/8", domain))
            s.append(CoefficientFn.parse(f"{scale}/8", domain))
        else:
            a, b = rng.uniform(-1, 1, size=2)
            q.append(CoefficientFn.parse(f"{a:.6f}*x + {b:.6f}", domain))
            s.append(CoefficientFn.parse(f"{scale / 8:.6f}*cos(x)", domain))
    return RBOperator(Partition(domain, tuple(maps)), tuple(q), tuple(s))


# ── Shared Given steps ──────────────────────────────────────────────


@given(parsers.parse('the shipped problem "{name}"'), target_fixture="config")
def given_shipped_problem(name: str) -> ProblemConfig:
    return load_config(name)


@given(parsers.parse('the operator of the shipped problem "{name}"'), target_fixture="operator")
def given_shipped_operator(name: str) -> Operator:
    return build_operator(load_config(name))


@given(parsers.parse('the domain "{text}"'), target_fixture="domain")
def given_domain(text: str) -> Box:
    return parse_domain(text)


@given("the operator:", target_fixture="operator")
def given_operator(domain: Box, datatable: list[list[str]]) -> RBOperator:
    rows = parse_table(datatable)
    return global_operator(
        domain,
        [(row["scale"], row["offset"]) for row in rows],
        [row["q"] for row in rows],
        [row["s"] for row in rows],
    )


# ── Shared Then steps ───────────────────────────────────────────────


@then(parsers.parse('the condition verdict should be "{verdict}"'))
def then_verdict(context: dict[str, Any], verdict: str) -> None:
    report = context["report"]
    assert report.verdict is (verdict == "true"), report.summary()


@then(parsers.parse("the largest gap should be at most {tol:g}"))
def then_gap_at_most(context: dict[str, Any], tol: float) -> None:
    assert context["report"].max_gap <= tol, context["report"].summary()
