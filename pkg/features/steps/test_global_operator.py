"""BDD steps for the global operator feature."""

from __future__ import annotations

import itertools
import re
from fractions import Fraction
from typing import TYPE_CHECKING, Any

import numpy as np
import pytest
from pytest_bdd import given, parsers, scenario, then, when

from rbfractal.coefficients import CoefficientFn
from rbfractal.errors import MaxIterations, NotContractive
from rbfractal.expr import evaluate, parse_expr
from rbfractal.geometry import Box
from rbfractal.grid import GridFunction, grid_eval, sup_distance
from rbfractal.rb_global import (
    RBOperator,
    apply,
    build_fif,
    check_continuity,
    contraction_factor,
    evaluate_by_address,
    interpolation_errors,
    iterate_to_fixed_point,
    picard_iterates,
    zero_term,
)
from rbfractal.runner import build_operator

from .conftest import random_operator

if TYPE_CHECKING:
    from collections.abc import Iterable

    from rbfractal.config import ProblemConfig

_POINT_RE = re.compile(r"\(\s*([^,()]+?)\s*,\s*([^,()]+?)\s*\)")

# ── Scenarios ────────────────────────────────────────────────────────


@scenario("../global_operator.feature", "The first example converges to a bounded fixed point")
def test_example_converges() -> None:
    pass


@scenario(
    "../global_operator.feature", "The parabola is the fixed point of a quarter-scale operator"
)
def test_parabola() -> None:
    pass


@scenario("../global_operator.feature", "A scale above one is refused before iterating")
def test_not_contractive() -> None:
    pass


@scenario("../global_operator.feature", "Running out of iterations keeps the partial result")
def test_max_iterations() -> None:
    pass


@scenario("../global_operator.feature", "Address evaluation follows the self-referential equation")
def test_address_evaluation() -> None:
    pass


@scenario("../global_operator.feature", "The fixed point does not depend on the starting function")
def test_start_independence() -> None:
    pass


@scenario("../global_operator.feature", "The a-priori bound holds along the Picard iteration")
def test_picard_bound() -> None:
    pass


@scenario("../global_operator.feature", "The zero term carries q onto each image")
def test_zero_term() -> None:
    pass


@scenario(
    "../global_operator.feature",
    "The a-priori bound holds along the Picard iteration of random operators",
)
def test_picard_bound_random() -> None:
    pass


@scenario(
    "../global_operator.feature", "Every random operator contracts the distance between grids"
)
def test_random_contraction() -> None:
    pass


@scenario(
    "../global_operator.feature", "Address evaluation agrees with the grid fixed point at the nodes"
)
def test_address_matches_grid() -> None:
    pass


@scenario("../global_operator.feature", "Fractal interpolation through three collinear points")
def test_fif_collinear() -> None:
    pass


@scenario(
    "../global_operator.feature", "The shipped interpolation problem passes through its data"
)
def test_fif_shipped() -> None:
    pass


@scenario("../global_operator.feature", "The sup distance is a metric on grids")
def test_sup_metric() -> None:
    pass


# ── Given ────────────────────────────────────────────────────────────


@given(parsers.parse("{count:d} random contractive operators"), target_fixture="operators")
def given_random_operators(count: int, rng: np.random.Generator) -> list[RBOperator]:
    return [random_operator(rng) for _ in range(count)]


@given(
    parsers.parse("{count:d} random grid triples at resolution {resolution:d}"),
    target_fixture="grid_triples",
)
def given_grid_triples(
    count: int, resolution: int, rng: np.random.Generator
) -> list[tuple[GridFunction, GridFunction, GridFunction]]:
    domain = Box.interval(0, 1)
    triples = []
    for i in range(count):
        k = 1 if i % 2 else 4
        f, g, h = (
            GridFunction(domain, resolution, rng.normal(size=(resolution, k))) for _ in range(3)
        )
        triples.append((f, g, h))
    return triples


# ── When ─────────────────────────────────────────────────────────────


def _iterate(
    operator: RBOperator, context: dict[str, Any], eps: float, resolution: int, k_max: int
) -> None:
    f0 = GridFunction.constant(operator.domain, resolution, 0.0)
    context["eps"] = eps
    try:
        context["result"] = iterate_to_fixed_point(operator, f0, eps, k_max)
    except (NotContractive, MaxIterations) as exc:
        context["error"] = exc


@when(parsers.parse("I iterate from zero to {eps:g} at resolution {resolution:d}"))
def when_iterate(
    operator: RBOperator, context: dict[str, Any], eps: float, resolution: int
) -> None:
    _iterate(operator, context, eps, resolution, 200)


@when(
    parsers.parse(
        "I iterate from zero to {eps:g} at resolution {resolution:d} with at most {k_max:d} steps"
    )
)
def when_iterate_capped(
    operator: RBOperator, context: dict[str, Any], eps: float, resolution: int, k_max: int
) -> None:
    _iterate(operator, context, eps, resolution, k_max)


@when(parsers.parse("I evaluate psi at {x} by address to depth {depth:d}"))
def when_address(operator: RBOperator, context: dict[str, Any], x: str, depth: int) -> None:
    context["address_value"] = evaluate_by_address(operator, Fraction(x), depth)


@when(
    parsers.parse(
        "I iterate each from 0 and from {start:g} to {eps:g} at resolution {resolution:d}"
    )
)
def when_iterate_pairs(
    operators: list[RBOperator],
    context: dict[str, Any],
    start: float,
    eps: float,
    resolution: int,
) -> None:
    pairs = []
    for op in operators:
        results = [
            iterate_to_fixed_point(
                op, GridFunction.constant(op.domain, resolution, value), eps, 500
            )
            for value in (0.0, start)
        ]
        pairs.append((results[0].psi, results[1].psi))
    context["pairs"] = pairs


@when(parsers.parse("I take {count:d} Picard iterates from zero at resolution {resolution:d}"))
def when_picard(
    operator: RBOperator, context: dict[str, Any], count: int, resolution: int
) -> None:
    f0 = GridFunction.constant(operator.domain, resolution, 0.0)
    context["iterates"] = [f0, *itertools.islice(picard_iterates(operator, f0), count)]


@when(parsers.parse("I take the zero term at resolution {resolution:d}"))
def when_zero_term(operator: RBOperator, context: dict[str, Any], resolution: int) -> None:
    context["zero_term"] = zero_term(operator, resolution)


@when(
    parsers.parse(
        "I take {count:d} Picard iterates of each from zero at resolution {resolution:d}"
    )
)
def when_picard_each(
    operators: list[RBOperator], context: dict[str, Any], count: int, resolution: int
) -> None:
    runs = []
    for op in operators:
        f0 = GridFunction.constant(op.domain, resolution, 0.0)
        runs.append((op, [f0, *itertools.islice(picard_iterates(op, f0), count)]))
    context["runs"] = runs


@when(parsers.parse("I apply each to {count:d} random pairs of grids at resolution {resolution:d}"))
def when_apply_pairs(
    operators: list[RBOperator],
    rng: np.random.Generator,
    context: dict[str, Any],
    count: int,
    resolution: int,
) -> None:
    distances = []
    for op in operators:
        s = contraction_factor(op)
        for _ in range(count):
            f, g = (
                GridFunction(op.domain, resolution, rng.uniform(-5, 5, resolution))
                for _ in range(2)
            )
            distances.append((sup_distance(apply(op, f), apply(op, g)), s * sup_distance(f, g)))
    context["distances"] = distances


@when(parsers.parse("I evaluate psi by address to depth {depth:d} at every {stride:d}th node"))
def when_address_nodes(
    operator: RBOperator, context: dict[str, Any], depth: int, stride: int
) -> None:
    psi = context["result"].psi
    nodes = [Fraction(float(x)) for x in psi.nodes[::stride, 0]]
    context["address_values"] = [
        (grid_eval(psi, x), evaluate_by_address(operator, x, depth)) for x in nodes
    ]


@when(
    parsers.parse('I build the interpolant of "{points}" with every scale {scale}'),
    target_fixture="operator",
)
def when_build_fif(context: dict[str, Any], points: str, scale: str) -> RBOperator:
    data = [(Fraction(x), Fraction(y)) for x, y in _POINT_RE.findall(points)]
    context["data"] = data
    domain = Box.interval(data[0][0], data[-1][0])
    return build_fif(data, [CoefficientFn.parse(scale, domain)] * (len(data) - 1))


@when("I check continuity at the junctions")
def when_continuity(operator: RBOperator, context: dict[str, Any]) -> None:
    context["report"] = check_continuity(operator)


@when(
    parsers.parse(
        "I build its operator and iterate from zero to {eps:g} at resolution {resolution:d}"
    )
)
def when_build_and_iterate(
    config: ProblemConfig, context: dict[str, Any], eps: float, resolution: int
) -> None:
    assert config.fif is not None
    context["data"] = config.fif.points
    op = build_operator(config)
    assert isinstance(op, RBOperator)
    _iterate(op, context, eps, resolution, 200)


# ── Then ─────────────────────────────────────────────────────────────


@then(parsers.parse("the contraction factor should lie between {lo:g} and {hi:g}"))
def then_contraction(operator: RBOperator, lo: float, hi: float) -> None:
    assert lo <= contraction_factor(operator) <= hi


@then(parsers.parse("the iteration should converge within {steps:d} steps"))
def then_converges(context: dict[str, Any], steps: int) -> None:
    result = context["result"]
    assert result.converged(context["eps"])
    assert result.iterations <= steps


@then("the residual should not exceed the a-priori bound")
def then_residual(context: dict[str, Any]) -> None:
    result = context["result"]
    assert result.residual <= result.apriori_bound


@then(parsers.parse("psi at {x} should be {value} within {tol:g}"))
def then_psi_at(context: dict[str, Any], x: str, value: str, tol: float) -> None:
    psi = context["result"].psi
    assert grid_eval(psi, Fraction(x)) == pytest.approx(float(Fraction(value)), abs=tol)


@then(parsers.parse("the grid should match {expr} within the a-priori bound"))
def then_matches(context: dict[str, Any], expr: str) -> None:
    result = context["result"]
    exact = GridFunction.from_fn(
        result.psi.domain,
        result.psi.resolution,
        lambda points: evaluate(parse_expr(expr), points),
    )
    assert sup_distance(result.psi, exact) <= result.apriori_bound + 1e-14


@then(parsers.parse("the iteration should be refused with factor {factor:g}"))
def then_refused(context: dict[str, Any], factor: float) -> None:
    exc = context["error"]
    assert isinstance(exc, NotContractive)
    assert exc.factor == pytest.approx(factor)


@then(
    parsers.parse("the iteration should stop after {steps:d} steps with a bound above {eps:g}")
)
def then_stopped(context: dict[str, Any], steps: int, eps: float) -> None:
    exc = context["error"]
    assert isinstance(exc, MaxIterations)
    assert exc.result.iterations == steps
    assert exc.result.apriori_bound > eps


@then(parsers.parse("the value should be {value} within the reported error bound"))
def then_address_value(context: dict[str, Any], value: str) -> None:
    found = context["address_value"]
    assert abs(found.value - float(Fraction(value))) <= found.error_bound + 1e-12


@then(parsers.parse("the address should be {head:d} followed by {count:d} ones"))
def then_address(context: dict[str, Any], head: int, count: int) -> None:
    assert context["address_value"].address == (head, *([1] * count))


@then(parsers.parse("each pair of fixed points should agree within {tol:g}"))
def then_pairs_agree(context: dict[str, Any], tol: float) -> None:
    for from_zero, from_start in context["pairs"]:
        assert sup_distance(from_zero, from_start) <= tol


@then(
    parsers.parse(
        "iterate k should be within the a-priori bound of iterate 2k for k up to {k_max:d}"
    )
)
def then_picard_bound(operator: RBOperator, context: dict[str, Any], k_max: int) -> None:
    _assert_picard_bound(operator, context["iterates"], range(1, k_max + 1))


@then(
    parsers.parse(
        "iterate k of each should be within the a-priori bound of iterate 2k for k in {ks}"
    )
)
def then_picard_bound_each(context: dict[str, Any], ks: str) -> None:
    steps = [int(k) for k in ks.split(",")]
    for op, iterates in context["runs"]:
        _assert_picard_bound(op, iterates, steps)


def _assert_picard_bound(
    operator: RBOperator, iterates: list[GridFunction], steps: Iterable[int]
) -> None:
    s = contraction_factor(operator)
    first_step = sup_distance(iterates[1], iterates[0])
    for k in steps:
        bound = s**k / (1 - s) * first_step
        assert sup_distance(iterates[k], iterates[2 * k]) <= bound + 1e-12, k


@then("every pair of images should be closer by at least the contraction factor")
def then_contracted(context: dict[str, Any]) -> None:
    for image_distance, bound in context["distances"]:
        assert image_distance <= bound + 1e-12


@then("each address value should match the grid within the sum of both error bounds")
def then_address_matches(context: dict[str, Any]) -> None:
    result = context["result"]
    for on_grid, by_address in context["address_values"]:
        assert isinstance(by_address.value, float)
        gap = abs(float(np.atleast_1d(on_grid)[0]) - by_address.value)
        assert gap <= result.apriori_bound + by_address.error_bound + 1e-12


@then("the fixed point should pass through the data within eps plus one grid step")
def then_interpolates(context: dict[str, Any]) -> None:
    psi = context["result"].psi
    h = float(psi.spacing())
    for error in interpolation_errors(psi, context["data"]):
        assert error <= context["eps"] + h


@then(
    parsers.parse('the zero term should be "{left}" below {cut} and "{right}" from there on')
)
def then_zero_term(context: dict[str, Any], left: str, cut: str, right: str) -> None:
    term = context["zero_term"]
    nodes = term.nodes
    inside = nodes[:, 0] < 1
    below = nodes[:, 0] < float(Fraction(cut))
    expected = np.where(
        below, evaluate(parse_expr(left), nodes), evaluate(parse_expr(right), nodes)
    )
    assert np.abs(term.values[inside, 0] - expected[inside]).max() <= 1e-12


@then("the sup distance should be symmetric")
def then_symmetric(grid_triples: list[tuple[GridFunction, GridFunction, GridFunction]]) -> None:
    for f, g, _ in grid_triples:
        assert sup_distance(f, g) == sup_distance(g, f)


@then("the sup distance of a grid to itself should be zero and positive to any other")
def then_identity(grid_triples: list[tuple[GridFunction, GridFunction, GridFunction]]) -> None:
    for f, g, _ in grid_triples:
        assert sup_distance(f, f) == 0.0
        assert sup_distance(f, g) > 0.0


@then("the sup distance should satisfy the triangle inequality")
def then_triangle(grid_triples: list[tuple[GridFunction, GridFunction, GridFunction]]) -> None:
    for f, g, h in grid_triples:
        assert sup_distance(f, h) <= sup_distance(f, g) + sup_distance(g, h) + 1e-12
