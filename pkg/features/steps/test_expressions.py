"""BDD steps for the coefficient expressions feature."""

from __future__ import annotations

from fractions import Fraction
from typing import TYPE_CHECKING, Any

import numpy as np
import pytest
from pytest_bdd import given, parsers, scenario, then, when

from rbfractal.coefficients import CoefficientFn, certify_sup_bound, eval_coefficient
from rbfractal.errors import DomainError, EvalError, ParseError
from rbfractal.expr import evaluate, parse_expr, to_source

if TYPE_CHECKING:
    from rbfractal.geometry import Box

# ── Scenarios ────────────────────────────────────────────────────────


@scenario("../expressions.feature", "Expressions evaluate with the usual precedence")
def test_precedence() -> None:
    pass


@scenario("../expressions.feature", "Syntax errors carry a column and the expected tokens")
def test_syntax_errors() -> None:
    pass


@scenario("../expressions.feature", "Division by zero is an evaluation error")
def test_division_by_zero() -> None:
    pass


@scenario("../expressions.feature", "Evaluation outside the domain is a domain error")
def test_outside_domain() -> None:
    pass


@scenario("../expressions.feature", "The sup bound of a smooth coefficient is certified and tight")
def test_sup_bound_smooth() -> None:
    pass


@scenario("../expressions.feature", "Rational constants have an exact sup bound")
def test_sup_bound_exact() -> None:
    pass


@scenario("../expressions.feature", "A quaternion constant is bounded by its norm")
def test_sup_bound_quaternion() -> None:
    pass


@scenario("../expressions.feature", "The certified sup bound is never below a sampled value")
def test_sup_bound_sound() -> None:
    pass


@scenario("../expressions.feature", "Printed expressions parse back to the same tree")
def test_print_parse() -> None:
    pass


# ── Given ────────────────────────────────────────────────────────────


@given(parsers.parse('the expression "{text}"'), target_fixture="text")
def given_expression(text: str) -> str:
    return text


@given(parsers.parse('the coefficient "{text}"'), target_fixture="coefficient")
def given_coefficient(domain: Box, text: str) -> CoefficientFn:
    return CoefficientFn.parse(text, domain)


@given(parsers.parse('the quaternion coefficient "{text}"'), target_fixture="coefficient")
def given_quaternion_coefficient(domain: Box, text: str) -> CoefficientFn:
    return CoefficientFn.parse(text, domain, quaternion=True)


# ── When ─────────────────────────────────────────────────────────────


@when(parsers.parse("I evaluate it at x = {x:g}"))
def when_evaluate(text: str, x: float, context: dict[str, Any]) -> None:
    try:
        context["value"] = float(evaluate(parse_expr(text), np.array([[x]]))[0])
    except EvalError as exc:
        context["error"] = exc


@when("I parse it")
def when_parse(text: str, context: dict[str, Any]) -> None:
    with pytest.raises(ParseError) as excinfo:
        parse_expr(text)
    context["error"] = excinfo.value


@when(parsers.parse("I evaluate the coefficient at {x}"))
def when_evaluate_coefficient(coefficient: CoefficientFn, x: str, context: dict[str, Any]) -> None:
    try:
        context["value"] = eval_coefficient(coefficient, Fraction(x))
    except DomainError as exc:
        context["error"] = exc


@when("I certify its sup bound")
def when_certify(coefficient: CoefficientFn, context: dict[str, Any]) -> None:
    context["bound"] = certify_sup_bound(coefficient, 4097)
    assert coefficient.sup_bound == context["bound"]


@when(parsers.parse("I certify its sup bound with {n:d} samples"))
def when_certify_with(coefficient: CoefficientFn, n: int, context: dict[str, Any]) -> None:
    context["bound"] = certify_sup_bound(coefficient, n)


@when("I print it and parse the result")
def when_print_parse(text: str, context: dict[str, Any]) -> None:
    ast = parse_expr(text, quaternion=True)
    context["ast"] = ast
    context["reparsed"] = parse_expr(to_source(ast), quaternion=True)


# ── Then ─────────────────────────────────────────────────────────────


@then(parsers.parse("the value should be {value:g}"))
def then_value(context: dict[str, Any], value: float) -> None:
    assert context["value"] == pytest.approx(value, abs=1e-12)


@then(parsers.parse("a parse error should point at column {column:d}"))
def then_column(context: dict[str, Any], column: int) -> None:
    assert context["error"].column == column


@then(parsers.parse('the expected tokens should include "{token}"'))
def then_expected(context: dict[str, Any], token: str) -> None:
    assert token in context["error"].expected


@then("an evaluation error should be raised")
def then_eval_error(context: dict[str, Any]) -> None:
    assert isinstance(context.get("error"), EvalError)


@then("a domain error should be raised")
def then_domain_error(context: dict[str, Any]) -> None:
    assert isinstance(context.get("error"), DomainError)


@then(parsers.parse("the bound should be at least {value:g}"))
def then_bound_at_least(context: dict[str, Any], value: float) -> None:
    context["true_sup"] = value
    assert context["bound"] >= value


@then(parsers.parse("the bound should exceed it by less than {slack:g}"))
def then_bound_tight(context: dict[str, Any], slack: float) -> None:
    assert context["bound"] - context["true_sup"] < slack


@then(parsers.parse("the bound should equal {value} exactly"))
def then_bound_exact(context: dict[str, Any], value: str) -> None:
    assert context["bound"] == float(Fraction(value))


@then("the coefficient should be quaternion valued")
def then_quaternion_valued(coefficient: CoefficientFn) -> None:
    assert coefficient.value_dim == 4


@then(parsers.parse("no value at {count:d} random points of the domain should exceed the bound"))
def then_bound_sound(
    coefficient: CoefficientFn, rng: np.random.Generator, count: int, context: dict[str, Any]
) -> None:
    lo, hi = float(coefficient.domain.lo[0]), float(coefficient.domain.hi[0])
    points = np.concatenate([rng.uniform(lo, hi, count), [lo, hi]])[:, None]
    assert float(np.max(np.abs(coefficient.values(points)))) <= context["bound"]


@then("the tree should be unchanged")
def then_same_tree(context: dict[str, Any]) -> None:
    assert context["reparsed"] == context["ast"]
