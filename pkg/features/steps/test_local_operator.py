"""BDD steps for the local operator feature."""

from __future__ import annotations

import dataclasses
import math
import re
from fractions import Fraction
from typing import TYPE_CHECKING, Any

import numpy as np
import pytest
from pytest_bdd import given, parsers, scenario, then, when

from rbfractal.coefficients import CoefficientFn
from rbfractal.errors import SemanticError
from rbfractal.expr import BinOp, const
from rbfractal.geometry import Box
from rbfractal.grid import GridFunction, grid_eval
from rbfractal.rb_global import apply
from rbfractal.rb_local import (
    LocalRBOperator,
    apply_local,
    build_even_n,
    check_local_compatibility,
    iterate_local,
    local_lp_certificate,
    verify_even_n,
    verify_local_partition,
)

from .conftest import parse_table, random_operator

if TYPE_CHECKING:
    from rbfractal.rb_global import RBOperator

_POINT_RE = re.compile(r"\(\s*([^,()]+?)\s*,\s*([^,()]+?)\s*\)")

# ── Scenarios ────────────────────────────────────────────────────────


@scenario("../local_operator.feature", "Four pieces interpolate three data points continuously")
def test_even_n_interpolates() -> None:
    pass


@scenario("../local_operator.feature", "Odd-knot values can be prescribed")
def test_even_n_joins() -> None:
    pass


@scenario("../local_operator.feature", "Data away from the knots is rejected")
def test_even_n_off_knot() -> None:
    pass


@scenario("../local_operator.feature", "Lp contractivity of the even-n operator")
def test_local_lp() -> None:
    pass


@scenario("../local_operator.feature", "A global operator is the local operator with X_i = X")
def test_global_is_local() -> None:
    pass


@scenario(
    "../local_operator.feature",
    "Multiplying every scale by t multiplies the local Lp sum by t^p",
)
def test_local_lp_scaling() -> None:
    pass


# ── Given ────────────────────────────────────────────────────────────


@given(parsers.parse('the data points "{points}" with scale {scale}'))
def given_data(points: str, scale: str, context: dict[str, Any]) -> None:
    context["data"] = [(Fraction(x), Fraction(y)) for x, y in _POINT_RE.findall(points)]
    context["scales"] = [CoefficientFn.parse(scale, Box.interval(0, 1))]
    context["joins"] = None


@given(parsers.parse('the odd-knot values "{values}"'))
def given_joins(values: str, context: dict[str, Any]) -> None:
    context["joins"] = [Fraction(v) for v in values.split(",")]


@given(
    parsers.parse("{count:d} random operators with exact coefficients"),
    target_fixture="operators",
)
def given_random_operators(count: int, rng: np.random.Generator) -> list[RBOperator]:
    return [random_operator(rng, exact=True) for _ in range(count)]


# ── When ─────────────────────────────────────────────────────────────


@when("I build the even-n operator")
def when_build(context: dict[str, Any]) -> None:
    try:
        context["local"] = build_even_n(
            context["data"], context["scales"], odd_knot_values=context["joins"]
        )
    except SemanticError as exc:
        context["error"] = exc


@when(
    parsers.parse(
        "I iterate the local operator from zero to {eps:g} at resolution {resolution:d}"
    )
)
def when_iterate(context: dict[str, Any], eps: float, resolution: int) -> None:
    op = context["local"]
    f0 = GridFunction.constant(op.domain, resolution, 0.0)
    context["result"] = iterate_local(op, f0, eps, 200)


@when(parsers.parse("I certify local Lp contractivity for p = {p}"))
def when_lp(context: dict[str, Any], p: str) -> None:
    context["report"] = local_lp_certificate(context["local"], math.inf if p == "inf" else float(p))


@when("I apply each as a global and as a local operator to a random grid")
def when_apply_both(
    operators: list[RBOperator], rng: np.random.Generator, context: dict[str, Any]
) -> None:
    pairs = []
    for op in operators:
        f = GridFunction(op.domain, 257, rng.integers(-64, 65, 257) / 64)
        pairs.append((apply(op, f), apply_local(LocalRBOperator.from_global(op), f)))
    context["pairs"] = pairs


@when(
    parsers.parse(
        "I measure the local Lp sum for p = {p} before and after multiplying every s by {t}"
    )
)
def when_lp_scaled(context: dict[str, Any], p: str, t: str) -> None:
    op = context["local"]
    exponent = math.inf if p == "inf" else float(p)
    factor = const(Fraction(t))
    pieces = tuple(
        dataclasses.replace(
            piece, s=CoefficientFn(BinOp("*", factor, piece.s.body), piece.s.domain)
        )
        for piece in op.pieces
    )
    scaled = LocalRBOperator(op.domain, pieces)
    context["sums"] = (
        local_lp_certificate(op, exponent).measure,
        local_lp_certificate(scaled, exponent).measure,
    )


# ── Then ─────────────────────────────────────────────────────────────


@then(parsers.parse('it should have {n:d} pieces on the subsets "{subsets}"'))
def then_subsets(context: dict[str, Any], n: int, subsets: str) -> None:
    op = context["local"]
    assert op.n == n
    assert ", ".join(str(p.subset) for p in op.pieces) == subsets


@then("the local images should partition the domain")
def then_partition(context: dict[str, Any]) -> None:
    assert verify_local_partition(context["local"]).ok


@then("the join-up report should pass")
def then_join_up(context: dict[str, Any]) -> None:
    report = verify_even_n(context["local"], context["data"])
    assert report.verdict, report.summary()


@then("psi should take the values:")
def then_values(context: dict[str, Any], datatable: list[list[str]]) -> None:
    psi = context["result"].psi
    for row in parse_table(datatable):
        expected = float(Fraction(row["psi"]))
        assert grid_eval(psi, Fraction(row["x"])) == pytest.approx(expected, abs=1e-8)


@then("the pieces should agree where neighbouring images touch")
def then_local_compatible(context: dict[str, Any]) -> None:
    report = check_local_compatibility(context["local"], context["result"].psi)
    assert len(report.witnesses) == 3
    assert report.verdict, report.summary()


@then(parsers.parse('a semantic error should mention "{text}"'))
def then_semantic_error(context: dict[str, Any], text: str) -> None:
    exc = context["error"]
    assert isinstance(exc, SemanticError)
    assert text in str(exc)


@then(parsers.parse("the local measure should be {measure:g}"))
def then_measure(context: dict[str, Any], measure: float) -> None:
    assert context["report"].measure == pytest.approx(measure)


@then("the results should be identical at every node")
def then_identical(context: dict[str, Any]) -> None:
    for global_image, local_image in context["pairs"]:
        assert np.array_equal(global_image.values, local_image.values)


@then(parsers.parse("the ratio of the sums should be {t} to the power {power:g}"))
def then_lp_ratio(context: dict[str, Any], t: str, power: float) -> None:
    before, after = context["sums"]
    assert after / before == pytest.approx(float(Fraction(t)) ** power, rel=1e-9)
