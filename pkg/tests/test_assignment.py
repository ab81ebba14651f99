from __future__ import annotations

from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stablefare.assignment import (
    InfeasibleAssignmentError,
    SizeGuardError,
    SolverOptions,
    assignment_from_counts,
    brute_force_assignment,
    build_model,
    check_feasible,
    lp_relaxation,
    objective_decomposition,
    solve_assignment,
)
from stablefare.model import Route
from stablefare.pipeline import model_size, pipeline_model
from stablefare.synthetic import random_instance

from _fixtures import six_node_example, identical_copies, single_agent, twin_routes


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_matches_brute_force(seed):
    inst = random_instance(seed)
    a = solve_assignment(inst)
    bf = brute_force_assignment(inst)
    assert a.objective_raw == bf.objective
    check_feasible(a, inst)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_float_and_highs_agree_with_exact(seed):
    inst = random_instance(seed)
    exact = solve_assignment(inst).objective_raw
    assert abs(float(solve_assignment(inst, SolverOptions(exact=False)).objective_raw) - float(exact)) < 1e-9
    assert abs(float(solve_assignment(inst, SolverOptions(backend="highs")).objective_raw) - float(exact)) < 1e-9


def test_raw_and_net_objective_differ_by_total_cost():
    inst, _ = six_node_example()
    a = solve_assignment(inst)
    total_cost = sum(inst.route_cost.values())
    assert a.objective_raw - total_cost == a.objective_net
    parts = objective_decomposition(a, inst)
    assert parts["objective_net"] == a.objective_net


def test_single_agent_assignment():
    a = solve_assignment(single_agent())
    assert a.x == {("s", "r"): 1} and a.used_routes == ("r",)
    assert a.objective_net == 5 and a.objective_raw == 8


def test_unprofitable_route_left_to_dummy():
    inst = single_agent().with_routes([Route("r", ("A", "B"), 1, cost=9)])
    a = solve_assignment(inst)
    assert a.x == {} and a.dummy == {"r": 1} and a.objective_net == 0


def test_partial_group_fills_capacity():
    inst = identical_copies()
    a = solve_assignment(inst)
    assert a.x == {("s", "r1"): 2, ("s", "r2"): 1}
    assert a.link_loads[("r1", 0)] == 2 and a.link_loads[("r1", 1)] == 2


def test_several_optima_listed():
    bf = brute_force_assignment(twin_routes(1))
    assert len(bf.optimum) == 2
    assert {o.key() for o in bf.optimum} == {((("s1", "r1"), 1),), ((("s1", "r2"), 1),)}


def test_row_counts_follow_model_size():
    for n in range(1, 8):
        _, model = pipeline_model(n)
        assert model.row_counts() == model_size(n)


def test_pair_cuts_are_extra_rows():
    model = build_model(identical_copies())
    assert len(model.rows(cuts=True)) == len(model.rows(cuts=False)) + len(model.pair_cuts)
    assert all(bound == min(3, 2) or bound == 1 for _, _, bound in model.pair_cuts)


def test_lp_relaxation_bounds_integer_optimum():
    for seed in range(20):
        inst = random_instance(seed)
        model = build_model(inst)
        relaxed = lp_relaxation(model)
        assert relaxed >= solve_assignment(model).objective_raw


def test_check_feasible_rejects_overload():
    inst = identical_copies()
    bad = assignment_from_counts(inst, {("s", "r2"): 2})
    with pytest.raises(InfeasibleAssignmentError):
        check_feasible(bad, inst)
    with pytest.raises(InfeasibleAssignmentError):
        assignment_from_counts(inst, {("t", "missing"): 1})


def test_size_guards():
    inst = random_instance(3)
    with pytest.raises(SizeGuardError):
        solve_assignment(inst, SolverOptions(max_users=1))
    with pytest.raises(SizeGuardError):
        brute_force_assignment(inst, max_units=1)


def test_exact_mode_returns_fractions():
    a = solve_assignment(random_instance(5))
    assert isinstance(a.objective_raw, F)
