"""BDD steps for the non-stationary schedule feature."""

from __future__ import annotations

import asyncio
import itertools
import math
import time
from collections import Counter
from fractions import Fraction
from typing import TYPE_CHECKING, Any

import numpy as np
import pytest
from pytest_bdd import given, parsers, scenario, then, when

from rbfractal.coefficients import CoefficientFn
from rbfractal.config import load_config
from rbfractal.errors import OutsideInvariantBall, UnknownName
from rbfractal.grid import GridFunction, grid_eval, sup_distance, sup_norm
from rbfractal.nonstationary import (
    Direction,
    OperatorSchedule,
    backward_trajectory,
    block_choice,
    builtin_operator,
    builtin_schedule,
    check_interpolation,
    forward_trajectory,
    summability_check,
)
from rbfractal.rb_global import apply, picard_iterates
from rbfractal.runner import build_schedule

if TYPE_CHECKING:
    from rbfractal.rb_global import RBOperator

# ── Scenarios ────────────────────────────────────────────────────────


@scenario("../nonstationary.feature", "Invariant balls of the shipped schedules")
def test_invariant_balls() -> None:
    pass


@scenario("../nonstationary.feature", "Backward trajectories converge at the certified rate")
def test_backward_convergence() -> None:
    pass


@scenario("../nonstationary.feature", "The limit forgets the starting function")
def test_initial_independence() -> None:
    pass


@scenario("../nonstationary.feature", "Forward trajectories carry no certificate")
def test_forward_trajectory() -> None:
    pass


@scenario(
    "../nonstationary.feature",
    "A start outside the invariant ball is refused in strict mode",
)
def test_strict_ball() -> None:
    pass


@scenario(
    "../nonstationary.feature",
    "Every operator of an interpolating schedule passes through its knots",
)
def test_interpolating_schedule() -> None:
    pass


@scenario("../nonstationary.feature", "Every operator maps the invariant ball into itself")
def test_ball_closure() -> None:
    pass


@scenario(
    "../nonstationary.feature",
    "A schedule that repeats one operator reduces to the Picard iteration",
)
def test_stationary_reduction() -> None:
    pass


@scenario("../nonstationary.feature", "Interpolating trajectories are pinned at both ends")
def test_interpolating_endpoints() -> None:
    pass


@scenario(
    "../nonstationary.feature",
    "One schedule shared by several threads generates each operator once",
)
def test_shared_schedule() -> None:
    pass


@scenario("../nonstationary.feature", "Operators alternate in blocks of five")
def test_block_choice() -> None:
    pass


@scenario("../nonstationary.feature", "Unknown builtin schedules are named in the error")
def test_unknown_schedule() -> None:
    pass


# ── Given ────────────────────────────────────────────────────────────


@given(parsers.parse('the schedule of the shipped problem "{name}"'), target_fixture="schedule")
def given_schedule(name: str, context: dict[str, Any]) -> OperatorSchedule:
    config = load_config(name)
    context["config"] = config
    return build_schedule(config)


@given(
    parsers.parse('a schedule that repeats the builtin operator "{name}"'),
    target_fixture="schedule",
)
def given_constant_schedule(name: str) -> OperatorSchedule:
    op = builtin_operator(name)
    return OperatorSchedule(lambda _k: op, period=1, name=name)


@given("a schedule that counts the operators it generates", target_fixture="schedule")
def given_counting_schedule(context: dict[str, Any]) -> OperatorSchedule:
    calls: Counter[int] = Counter()

    def generate(k: int) -> RBOperator:
        calls[k] += 1
        time.sleep(0.001)
        return builtin_operator("takagi" if k % 2 else "parabola")

    context["calls"] = calls
    return OperatorSchedule(generate, name="counting")


# ── When ─────────────────────────────────────────────────────────────


@when(
    parsers.parse(
        "I compose {short:d} and {long:d} operators backwards at resolution {resolution:d}"
    )
)
def when_compose_two(
    schedule: OperatorSchedule, context: dict[str, Any], short: int, long: int, resolution: int
) -> None:
    f0 = schedule.initial_grid(resolution)
    context["short"] = backward_trajectory(schedule, f0, short)
    context["long"] = backward_trajectory(schedule, f0, long)


@when(
    parsers.parse(
        'I compose {depth:d} operators backwards from 0 and from "{start}"'
        " at resolution {resolution:d}"
    )
)
def when_compose_from_two_starts(
    schedule: OperatorSchedule, context: dict[str, Any], depth: int, start: str, resolution: int
) -> None:
    domain = schedule.operator(1).domain
    zero = GridFunction.constant(domain, resolution)
    other = GridFunction.from_coefficient(CoefficientFn.parse(start, domain), resolution)
    context["short"] = backward_trajectory(schedule, zero, depth)
    context["long"] = backward_trajectory(schedule, other, depth)


@when(parsers.parse("I compose {depth:d} operators forwards at resolution {resolution:d}"))
def when_compose_forward(
    schedule: OperatorSchedule, context: dict[str, Any], depth: int, resolution: int
) -> None:
    context["result"] = forward_trajectory(schedule, schedule.initial_grid(resolution), depth)


@when(parsers.parse("I compose {depth:d} operators backwards at resolution {resolution:d}"))
def when_compose_backward(
    schedule: OperatorSchedule, context: dict[str, Any], depth: int, resolution: int
) -> None:
    context["result"] = backward_trajectory(schedule, schedule.initial_grid(resolution), depth)


@when(parsers.parse("I start a strict trajectory from the constant {value:g}"))
def when_strict(schedule: OperatorSchedule, context: dict[str, Any], value: float) -> None:
    f0 = GridFunction.constant(schedule.operator(1).domain, 257, value)
    with pytest.raises(OutsideInvariantBall) as excinfo:
        backward_trajectory(schedule, f0, 5, strict=True)
    context["error"] = excinfo.value


@when(parsers.parse("I pick operator {k:d} of a builtin block schedule"))
def when_pick(context: dict[str, Any], k: int) -> None:
    context["choice"] = block_choice(k)


@when(parsers.parse('I ask for the builtin schedule "{name}"'))
def when_unknown(context: dict[str, Any], name: str) -> None:
    with pytest.raises(UnknownName) as excinfo:
        builtin_schedule(name)
    context["error"] = excinfo.value


@when(
    parsers.parse(
        "I apply operators 1 to {k_max:d} to {count:d} random grids inside the invariant ball"
        " at resolution {resolution:d}"
    )
)
def when_apply_in_ball(
    schedule: OperatorSchedule,
    rng: np.random.Generator,
    context: dict[str, Any],
    k_max: int,
    count: int,
    resolution: int,
) -> None:
    radius = schedule.invariant_radius
    domain = schedule.operator(1).domain
    grids = [GridFunction.constant(domain, resolution, radius)]
    grids += [
        GridFunction(domain, resolution, radius * rng.uniform(-1, 1, resolution))
        for _ in range(count - 1)
    ]
    context["radius"] = radius
    context["image_norms"] = [
        sup_norm(apply(schedule.operator(k), f)) for k in range(1, k_max + 1) for f in grids
    ]


@when(
    parsers.parse(
        "I compose {depth:d} operators backwards and take as many Picard iterates"
        " at resolution {resolution:d}"
    )
)
def when_compose_and_picard(
    schedule: OperatorSchedule, context: dict[str, Any], depth: int, resolution: int
) -> None:
    op = schedule.operator(1)
    f0 = GridFunction.constant(op.domain, resolution)
    context["result"] = backward_trajectory(schedule, f0, depth)
    context["picard"] = list(itertools.islice(picard_iterates(op, f0), depth))[-1]


@when(
    parsers.parse(
        "I compose every depth from 1 to {k_max:d} backwards at resolution {resolution:d}"
    )
)
def when_compose_each_depth(
    schedule: OperatorSchedule, context: dict[str, Any], k_max: int, resolution: int
) -> None:
    f0 = schedule.initial_grid(resolution)
    context["trajectories"] = [
        backward_trajectory(schedule, f0, k).psi for k in range(1, k_max + 1)
    ]


@when(parsers.parse("{threads:d} threads ask it for operators 1 to {k_max:d} at the same time"))
def when_threads(
    schedule: OperatorSchedule, context: dict[str, Any], threads: int, k_max: int
) -> None:
    def fetch() -> list[RBOperator]:
        return [schedule.operator(k) for k in range(1, k_max + 1)]

    async def run_all() -> list[list[RBOperator]]:
        return await asyncio.gather(*(asyncio.to_thread(fetch) for _ in range(threads)))

    context["seen"] = asyncio.run(run_all())
    context["k_max"] = k_max


# ── Then ─────────────────────────────────────────────────────────────


@then(parsers.parse("the uniform scale bound should be {s:g}"))
def then_uniform_s(schedule: OperatorSchedule, s: float) -> None:
    assert schedule.uniform_s == s


@then(parsers.parse("the invariant radius should be {radius:g}"))
def then_radius(schedule: OperatorSchedule, radius: float) -> None:
    assert schedule.invariant_radius == pytest.approx(radius, abs=1e-3)


@then(parsers.parse("the summability check over {k_max:d} operators should pass"))
def then_summable(schedule: OperatorSchedule, k_max: int) -> None:
    report = summability_check(schedule, k_max)
    assert report.verdict, report.summary()
    assert math.isfinite(report.measure)


@then(parsers.parse("the two trajectories should differ by at most the depth-{depth:d} tail bound"))
def then_tail(context: dict[str, Any], depth: int) -> None:
    short = context["short"]
    assert short.depth == depth
    assert sup_distance(short.psi, context["long"].psi) <= short.tail_bound


@then(parsers.parse("the two trajectories should differ by at most 2^-{power:d}"))
def then_close(context: dict[str, Any], power: int) -> None:
    assert sup_distance(context["short"].psi, context["long"].psi) <= 2.0**-power + 1e-12


@then(parsers.parse("psi at {x} should be {value:g} within {tol:g}"))
def then_psi_at(context: dict[str, Any], x: str, value: float, tol: float) -> None:
    assert grid_eval(context["long"].psi, Fraction(x)) == pytest.approx(value, abs=tol)


@then("the trajectory should be a forward one with an infinite tail bound")
def then_forward(context: dict[str, Any]) -> None:
    result = context["result"]
    assert result.direction is Direction.FORWARD
    assert math.isinf(result.tail_bound)


@then(parsers.parse("an OutsideInvariantBall error should report radius {radius:g}"))
def then_outside(context: dict[str, Any], radius: float) -> None:
    exc = context["error"]
    assert exc.radius == pytest.approx(radius, abs=1e-3)
    assert exc.norm == 10


@then(parsers.parse("the trajectory should interpolate the first-level knots within {tol:g}"))
def then_interpolates(context: dict[str, Any], tol: float) -> None:
    spec = context["config"].schedule.interpolating
    report = check_interpolation(context["result"].psi, spec.nodes(1), tol)
    assert report.verdict, report.summary()
    assert len(report.witnesses) == 9


@then(parsers.parse("the choice should be {choice:d}"))
def then_block(context: dict[str, Any], choice: int) -> None:
    assert context["choice"] == choice


@then(parsers.parse('an UnknownName error should list "{names}"'))
def then_unknown(context: dict[str, Any], names: str) -> None:
    assert ", ".join(context["error"].choices) == names


@then("every image should stay inside the invariant ball")
def then_inside_ball(context: dict[str, Any]) -> None:
    assert max(context["image_norms"]) <= context["radius"] + 1e-12


@then("both grids should be identical at every node")
def then_same_grid(context: dict[str, Any]) -> None:
    assert np.array_equal(context["result"].psi.values, context["picard"].values)


@then(parsers.parse("every trajectory should take the values of f at 0 and 1 within {tol:g}"))
def then_pinned(context: dict[str, Any], tol: float) -> None:
    f_0, f_1 = context["config"].schedule.interpolating.endpoint_values
    for psi in context["trajectories"]:
        assert grid_eval(psi, Fraction(0)) == pytest.approx(float(f_0), abs=tol)
        assert grid_eval(psi, Fraction(1)) == pytest.approx(float(f_1), abs=tol)


@then("every thread should see the same operator objects")
def then_same_objects(context: dict[str, Any]) -> None:
    first, *others = context["seen"]
    for seen in others:
        assert all(a is b for a, b in zip(first, seen, strict=True))


@then("each operator should have been generated once")
def then_generated_once(context: dict[str, Any]) -> None:
    assert context["calls"] == Counter(range(1, context["k_max"] + 1))
