from __future__ import annotations

from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stablefare.assignment import assignment_from_counts, brute_force_assignment, solve_assignment
from stablefare.core import (
    STATUS_EMPTY,
    STATUS_OPTIMAL,
    AllocationError,
    CoalitionExplosionError,
    allocation_gap,
    build_stability_system,
    check_stability,
    compute_prices,
    convex_combination,
    enumerate_coalitions,
    expand_agents,
    feasibility_scan,
    infeasibility_certificate,
    solve_allocation,
)
from stablefare.model import Route, UserGroup, validate_instance
from stablefare.synthetic import random_instance

from _fixtures import (
    EMPTY_CORE_SEED,
    KNOWN_SIX_NODE_SETS,
    SINGLE_POINT_SEED,
    assert_stable_and_fragile,
    six_node_example,
    identical_copies,
    line_network,
    single_agent,
    twin_routes,
)


# --- coalitions -----------------------------------------------------------------------

def test_six_node_family_contains_known_sets():
    inst, x = six_node_example()
    agents = expand_agents(inst, x)
    family = {(r, c.members) for r in ("r1", "r2", "r3") for c in enumerate_coalitions(inst, r, agents)}
    assert KNOWN_SIX_NODE_SETS <= family
    # the rest are capacity-feasible too; nothing overloads a link
    for rid, members in family:
        route = inst.route(rid)
        load = [0] * len(route.legs)
        for m in members:
            for leg in inst.geometry[(m, rid)].leg_indices:
                load[leg] += 1
        assert max(load) <= route.capacity


def test_six_node_overloaded_sets_absent():
    inst, x = six_node_example()
    members = {c.members for c in enumerate_coalitions(inst, "r1", expand_agents(inst, x))}
    assert ("s1", "s2", "s4") not in members  # three riders on 3->2
    assert ("s1", "s3", "s4") not in members  # three riders on 5->4


def test_route_with_one_compatible_agent():
    inst, x = six_node_example()
    cos = enumerate_coalitions(inst, "r2", expand_agents(inst, x))
    assert [c.members for c in cos] == [("s4",)]


def test_zero_payoff_agent_never_in_coalition():
    net = line_network(["A", "B"])
    inst = validate_instance(net, [Route("r", ("A", "B"), 3, cost=1)],
                             [UserGroup("rich", "A", "B", 1, 5), UserGroup("broke", "A", "B", 1, 0)])
    for c in enumerate_coalitions(inst, "r"):
        assert "broke" not in c.members


def test_symmetric_enumeration_counts_multisets():
    inst = identical_copies()
    sym = enumerate_coalitions(inst, "r1")
    full = enumerate_coalitions(inst, "r1", symmetry=False)
    assert {c.counts for c in sym} == {c.counts for c in full}
    assert len(sym) < len(full)


def test_coalition_cap(monkeypatch):
    inst = identical_copies()
    with pytest.raises(CoalitionExplosionError):
        enumerate_coalitions(inst, "r1", max_coalitions=2)
    monkeypatch.setenv("STABLEFARE_MAX_COALITIONS", "1")
    with pytest.raises(CoalitionExplosionError):
        enumerate_coalitions(inst, "r1")


def test_ownership_excludes_symmetry():
    inst, x = six_node_example()
    with pytest.raises(AllocationError):
        build_stability_system(inst, x, ownership={"r1": "a", "r2": "b", "r3": "a"}, symmetry=True)


# --- allocation -----------------------------------------------------------------------

def test_single_agent_extremes():
    inst = single_agent()
    a = solve_assignment(inst)
    user = solve_allocation(inst, a, "user")
    op = solve_allocation(inst, a, "operator")
    assert (user.u, user.v) == ({"s": 5}, {"r": 0})
    assert (op.u, op.v) == ({"s": 0}, {"r": 5})
    assert user.value == 5 and op.value == 5


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10**6), st.sampled_from(["user", "operator"]))
def test_outcomes_stable_and_fragile(seed, objective):
    inst = random_instance(seed)
    a = solve_assignment(inst)
    out = solve_allocation(inst, a, objective)
    if out.status == STATUS_EMPTY:
        assert not feasibility_scan(inst, a)
        return
    assert_stable_and_fragile(inst, a, out)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_symmetry_reduction_keeps_optimum(seed):
    inst = random_instance(seed)
    a = solve_assignment(inst)
    for objective in ("user", "operator"):
        sym = solve_allocation(inst, a, objective)
        full = solve_allocation(inst, a, objective, symmetry=False)
        assert sym.status == full.status
        if sym.status == STATUS_OPTIMAL:
            assert sym.value == full.value


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_float_mode_agrees(seed):
    inst = random_instance(seed)
    a = solve_assignment(inst)
    exact = solve_allocation(inst, a, "user")
    approx = solve_allocation(inst, a, "user", exact=False)
    assert exact.status == approx.status
    if exact.status == STATUS_OPTIMAL:
        assert abs(float(exact.value) - approx.value) < 1e-6
        assert check_stability(inst, a, approx.u, approx.v, tol=1e-6)


def test_total_profit_is_net_objective():
    for seed in range(30):
        inst = random_instance(seed)
        a = solve_assignment(inst)
        out = solve_allocation(inst, a, "user")
        if out.status == STATUS_OPTIMAL:
            assert out.total == a.objective_net


def test_empty_core_fixture():
    inst = random_instance(EMPTY_CORE_SEED)
    a = solve_assignment(inst)
    assert solve_allocation(inst, a, "user").status == STATUS_EMPTY
    assert solve_allocation(inst, a, "operator").status == STATUS_EMPTY
    assert not feasibility_scan(inst, a)
    system = build_stability_system(inst, a)
    cert = infeasibility_certificate(system, exact=True)
    assert cert
    # dropping any certificate row restores feasibility
    for i in range(len(cert)):
        sub = build_stability_system(inst, a)
        drop = cert[i]
        sub.inequalities = [row for row in sub.inequalities if row[2] in cert and row[2] != drop]
        assert infeasibility_certificate(sub, exact=True) == []


def test_single_point_core():
    inst = random_instance(SINGLE_POINT_SEED)
    a = solve_assignment(inst)
    user = solve_allocation(inst, a, "user")
    op = solve_allocation(inst, a, "operator")
    assert user.u == op.u and user.v == op.v
    assert all(v == 0 for v in op.v.values())


def test_checker_reports_blocking_coalition():
    inst = twin_routes(1)
    a = assignment_from_counts(inst, {("s1", "r1"): 1})
    verdict = check_stability(inst, a, {"s1": 0}, {"r1": 5})
    assert not verdict
    assert verdict.reason == "blocking coalition"
    assert verdict.route == "r2" and verdict.members == ("s1",)
    assert verdict.rhs == 5 and verdict.lhs == 0


def test_checker_flags_broken_feasibility():
    inst = single_agent()
    a = solve_assignment(inst)
    out = solve_allocation(inst, a, "user")
    u = {"s": out.u["s"] - F(1, 10)}
    verdict = check_stability(inst, a, u, out.v)
    assert verdict.reason == "feasibility equality violated"


# --- prices ---------------------------------------------------------------------------

def test_prices_and_revenue_identity():
    inst = identical_copies()
    a = solve_assignment(inst)
    user = compute_prices(inst, a, solve_allocation(inst, a, "user"))
    op = compute_prices(inst, a, solve_allocation(inst, a, "operator"))
    # user t = 0.5 * 2 min; U = 9
    assert user.price("s#0") == 8 - F(5, 2)
    assert op.price("s#0") == 8
    assert user.revenue["r1"] == inst.route_cost["r1"] + 7
    gaps = allocation_gap(user, op)
    assert all(g >= 0 for _, g in gaps)
    assert gaps == sorted(gaps, key=lambda item: (-item[1], item[0]))


def test_no_prices_for_empty_core():
    inst = random_instance(EMPTY_CORE_SEED)
    a = solve_assignment(inst)
    with pytest.raises(AllocationError):
        compute_prices(inst, a, solve_allocation(inst, a, "user"))


# --- structural properties ------------------------------------------------------------

@pytest.mark.parametrize("lam", [F(1, 4), F(1, 2), F(3, 4)])
def test_convex_combinations_stable(lam):
    for seed in range(25):
        inst = random_instance(seed)
        a = solve_assignment(inst)
        user = solve_allocation(inst, a, "user")
        if user.status != STATUS_OPTIMAL:
            continue
        mix = convex_combination(user, solve_allocation(inst, a, "operator"), lam)
        assert check_stability(inst, a, mix.u, mix.v, tol=0)


def test_convex_combination_rejects_bad_lambda():
    inst = single_agent()
    a = solve_assignment(inst)
    o = solve_allocation(inst, a, "user")
    with pytest.raises(AllocationError):
        convex_combination(o, o, F(3, 2))


def test_twin_optima_share_stable_set():
    inst = twin_routes(1)
    optima = brute_force_assignment(inst).optimum
    assert len(optima) == 2
    for a in optima:
        for objective in ("user", "operator"):
            out = solve_allocation(inst, a, objective)
            for other in optima:
                assert check_stability(inst, other, out.u, out.v, tol=0)


def test_identical_copies_equal_profit():
    inst = identical_copies()
    a = solve_assignment(inst)
    for objective in ("user", "operator"):
        out = solve_allocation(inst, a, objective, symmetry=False)
        on_r1 = [out.u[ag.id] for ag in expand_agents(inst, a) if ag.route == "r1"]
        assert len(set(on_r1)) == 1
