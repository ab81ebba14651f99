"""Stable cost allocation: coalitions, the core LP, stability checks, prices.

Demand bundles are expanded into unit agents before anything here runs.
Copy ``k`` of group ``s`` is called ``"s#k"`` (plain ``"s"`` when the group
has a single traveler); copies are handed to routes in route-id order, and
whatever is left over is unmatched.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

from .assignment import Assignment
from .lp import INFEASIBLE, OPTIMAL, solve_lexicographic
from .model import ProblemInstance

DEFAULT_MAX_COALITIONS = 2_000_000

STATUS_OPTIMAL = "optimal"
STATUS_EMPTY = "empty_core"


class CoalitionExplosionError(RuntimeError):
    pass


class AllocationError(ValueError):
    pass


def max_coalitions_default() -> int:
    env = os.environ.get("STABLEFARE_MAX_COALITIONS")
    return int(env) if env else DEFAULT_MAX_COALITIONS


@dataclass(frozen=True)
class Agent:
    id: str
    group: str
    copy: int
    route: str | None  # matched route, None if unmatched


def agent_name(group: str, copy: int, demand: int) -> str:
    return group if demand == 1 else f"{group}#{copy}"


def expand_agents(instance: ProblemInstance, assignment: Assignment) -> list:
    agents = []
    for s in sorted(instance.users, key=lambda s: s.id):
        slots = []
        for rid in sorted(assignment.routes_of(s.id)):
            slots += [rid] * assignment.x[(s.id, rid)]
        slots += [None] * (s.demand - len(slots))
        for k, rid in enumerate(slots):
            agents.append(Agent(agent_name(s.id, k, s.demand), s.id, k, rid))
    return agents


@dataclass(frozen=True)
class Coalition:
    route: str
    members: tuple  # agent ids
    counts: tuple  # ((group id, copies), ...)
    rhs: Fraction


def _route_types(instance: ProblemInstance, rid: str) -> list:
    """Groups that can ride ``rid`` with positive payoff, as (sid, q, legs, a)."""
    out = []
    for s in sorted(instance.users, key=lambda s: s.id):
        g = instance.geometry[(s.id, rid)]
        a = instance.payoff[(s.id, rid)]
        if g.compatible and a > 0:
            out.append((s.id, s.demand, g.leg_indices, a))
    return out


def enumerate_coalitions(instance: ProblemInstance, route_id: str, agents: Sequence[Agent] | None = None,
                         symmetry: bool = True, max_coalitions: int | None = None) -> list:
    """Every capacity-feasible nonempty coalition of positive-payoff agents on a route.

    With ``symmetry`` one representative per multiset of group types is
    produced; its members are the unmatched copies first, then matched copies,
    each by copy index, which is the weakest (lowest-profit) choice once
    identical matched copies share the same profit.
    """
    cap = max_coalitions if max_coalitions is not None else max_coalitions_default()
    route = instance.route(route_id)
    C = instance.route_cost[route_id]
    types = _route_types(instance, route_id)
    if agents is None:
        agents = [Agent(agent_name(s.id, k, s.demand), s.id, k, None)
                  for s in sorted(instance.users, key=lambda s: s.id) for k in range(s.demand)]
    copies = {}
    for ag in agents:
        copies.setdefault(ag.group, []).append(ag)
    for g in copies.values():
        g.sort(key=lambda ag: (ag.route is not None, ag.copy))

    out: list = []
    load = [0] * len(route.legs)

    def emit(chosen):
        members, counts, rhs = [], [], -C
        for (sid, _, _, a), k in chosen:
            members += [ag.id for ag in copies[sid][:k]]
            counts.append((sid, k))
            rhs += a * k
        out.append(Coalition(route_id, tuple(members), tuple(counts), rhs))
        if len(out) > cap:
            raise CoalitionExplosionError(f"more than {cap} coalitions on route {route_id}")

    if symmetry:
        def rec(i, chosen):
            if i == len(types):
                if chosen:
                    emit(chosen)
                return
            t = types[i]
            sid, q, legs, _ = t
            for k in range(0, q + 1):
                if k and any(load[l] + k > route.capacity for l in legs):
                    break
                for l in legs:
                    load[l] += k
                rec(i + 1, chosen + [(t, k)] if k else chosen)
                for l in legs:
                    load[l] -= k
        rec(0, [])
        return out

    units = [(t, ag) for t in types for ag in copies.get(t[0], [])]

    def rec_units(i, chosen):
        if i == len(units):
            if chosen:
                members = tuple(ag.id for _, ag in chosen)
                counts = {}
                for t, _ in chosen:
                    counts[t[0]] = counts.get(t[0], 0) + 1
                rhs = sum((t[3] for t, _ in chosen), Fraction(0)) - C
                out.append(Coalition(route_id, members, tuple(sorted(counts.items())), rhs))
                if len(out) > cap:
                    raise CoalitionExplosionError(f"more than {cap} coalitions on route {route_id}")
            return
        t, ag = units[i]
        rec_units(i + 1, chosen)
        if all(load[l] + 1 <= route.capacity for l in t[2]):
            for l in t[2]:
                load[l] += 1
            rec_units(i + 1, chosen + [(t, ag)])
            for l in t[2]:
                load[l] -= 1

    rec_units(0, [])
    return out


def rival_filter(ownership: Mapping[str, str], agents: Sequence[Agent]) -> Callable:
    """Keep a coalition on ``r`` only if some member is currently served by another operator.

    Unmatched members belong to no operator, so they always pass.
    """
    where = {ag.id: ag.route for ag in agents}

    def keep(coalition: Coalition) -> bool:
        owner = ownership[coalition.route]
        for m in coalition.members:
            current = where[m]
            if current is None or ownership[current] != owner:
                return True
        return False

    return keep


@dataclass
class StabilitySystem:
    """Linear system over matched-agent profits ``u`` and used-route profits ``v``."""

    agents: list
    u_vars: tuple  # matched agent ids
    v_vars: tuple  # used route ids
    equalities: list = field(default_factory=list)  # (coef dict by name, rhs, label)
    inequalities: list = field(default_factory=list)  # (coef dict by name, rhs, coalition) meaning >=
    trivially_infeasible: Coalition | None = None
    n_coalitions: int = 0

    @property
    def names(self) -> tuple:
        return tuple(("u", a) for a in self.u_vars) + tuple(("v", r) for r in self.v_vars)


def build_stability_system(instance: ProblemInstance, assignment: Assignment,
                           ownership: Mapping[str, str] | None = None, symmetry: bool | None = None,
                           max_coalitions: int | None = None) -> StabilitySystem:
    """Feasibility equalities plus one ``>=`` row per non-redundant coalition.

    Rows whose right side is not positive follow from non-negativity and are
    dropped; coalitions giving the same left side keep only the largest right
    side.
    """
    agents = expand_agents(instance, assignment)
    if symmetry is None:
        symmetry = ownership is None
    if symmetry and ownership is not None:
        raise AllocationError("symmetry reduction is not valid with an ownership filter")
    matched = tuple(ag.id for ag in agents if ag.route is not None)
    used = tuple(sorted(assignment.used_routes))
    system = StabilitySystem(agents, matched, used)
    keep = rival_filter(ownership, agents) if ownership is not None else None

    for rid in used:
        members = [ag for ag in agents if ag.route == rid]
        rhs = sum((instance.payoff[(ag.group, rid)] for ag in members), Fraction(0)) - instance.route_cost[rid]
        coefs = {("u", ag.id): 1 for ag in members}
        coefs[("v", rid)] = 1
        system.equalities.append((coefs, rhs, f"feasibility:{rid}"))

    if symmetry:
        by_group = {}
        for ag in agents:
            if ag.route is not None:
                by_group.setdefault(ag.group, []).append(ag.id)
        for gid, ids in sorted(by_group.items()):
            for other in ids[1:]:
                system.equalities.append(({("u", ids[0]): 1, ("u", other): -1}, Fraction(0),
                                          f"identical:{gid}"))

    matched_set = set(matched)
    used_set = set(used)
    best: dict = {}
    for r in sorted(instance.routes, key=lambda r: r.id):
        for co in enumerate_coalitions(instance, r.id, agents, symmetry, max_coalitions):
            system.n_coalitions += 1
            if co.rhs <= 0:
                continue
            if keep is not None and not keep(co):
                continue
            lhs = frozenset([("u", m) for m in co.members if m in matched_set]
                            + ([("v", r.id)] if r.id in used_set else []))
            if not lhs:
                if system.trivially_infeasible is None:
                    system.trivially_infeasible = co
                continue
            prev = best.get(lhs)
            if prev is None or co.rhs > prev.rhs:
                best[lhs] = co
    for lhs, co in best.items():
        system.inequalities.append(({name: 1 for name in lhs}, co.rhs, co))
    system.inequalities.sort(key=lambda row: (row[2].route, row[2].members))
    return system


@dataclass(frozen=True)
class Objective:
    """Linear objective over ``u`` and ``v`` (maximized).

    Ties inside the optimal face are broken in two stages. With
    ``equalize`` the spread between the highest and lowest ticket price on
    each used route is minimized first (summed over routes). Then matched
    agents are fixed one identity group at a time in id order; ``refine``
    sets the direction (``"max"`` favours low-index agents, ``"min"`` the
    operators).
    """

    name: str
    u_weight: Fraction | Mapping[str, Fraction] = Fraction(0)
    v_weight: Fraction | Mapping[str, Fraction] = Fraction(0)
    refine: str = "max"
    equalize: bool = True

    def weight(self, kind: str, key: str) -> Fraction:
        w = self.u_weight if kind == "u" else self.v_weight
        if isinstance(w, Mapping):
            return Fraction(w.get(key, 0))
        return Fraction(w)


USER_OPTIMAL = Objective("user", u_weight=Fraction(1), refine="max")
OPERATOR_OPTIMAL = Objective("operator", v_weight=Fraction(1), refine="min", equalize=False)


def _objective(spec) -> Objective:
    if isinstance(spec, Objective):
        return spec
    if spec in ("user", "user-optimal", "user_optimal"):
        return USER_OPTIMAL
    if spec in ("operator", "operator-optimal", "operator_optimal"):
        return OPERATOR_OPTIMAL
    raise AllocationError(f"unknown objective {spec!r}")


@dataclass(frozen=True)
class AllocationOutcome:
    u: Mapping[str, Fraction | float]  # every agent, matched or not
    v: Mapping[str, Fraction | float]  # every route
    objective: str
    value: Fraction | float | None
    status: str
    stages: int = 0

    @property
    def total(self):
        return sum(self.u.values()) + sum(self.v.values())


def _lp_rows(system: StabilitySystem, index: dict) -> list:
    rows = []
    for coefs, rhs, _ in system.equalities:
        rows.append(({index[k]: c for k, c in coefs.items()}, "=", rhs))
    for coefs, rhs, _ in system.inequalities:
        rows.append(({index[k]: c for k, c in coefs.items()}, ">=", rhs))
    return rows


def _spread_rows(instance: ProblemInstance, system: StabilitySystem, index: dict, first: int) -> tuple:
    """Rows ``p_i - p_j <= d_r`` for every ordered pair of riders on a used route.

    With ``p = base - u`` this reads ``u_j - u_i - d_r <= base_j - base_i``.
    Returns ``(rows, d columns)``.
    """
    riders: dict = {}
    for ag in system.agents:
        if ag.route is not None:
            riders.setdefault(ag.route, []).append(ag)
    rows, cols = [], []
    for rid in system.v_vars:
        group = riders.get(rid, [])
        if len({ag.group for ag in group}) < 2:
            continue
        d = first + len(cols)
        cols.append(d)
        base = {}
        for ag in group:
            s = instance.user(ag.group)
            base[ag.id] = s.utility_for(rid) - instance.t[(s.id, rid)] - s.min_benefit
        for i, j in itertools.permutations(group, 2):
            if i.group == j.group:
                continue
            rows.append(({index[("u", j.id)]: 1, index[("u", i.id)]: -1, d: -1}, "<=",
                         base[j.id] - base[i.id]))
    return rows, cols


def solve_system(instance: ProblemInstance, system: StabilitySystem, objective="user",
                 exact: bool = True, tol: float = 1e-7) -> AllocationOutcome:
    obj = _objective(objective)
    names = system.names
    index = {k: i for i, k in enumerate(names)}
    rows = _lp_rows(system, index)
    zero = Fraction(0) if exact else 0.0
    if system.trivially_infeasible is not None:
        return AllocationOutcome({}, {}, obj.name, None, STATUS_EMPTY)
    c = {}
    for i, (kind, key) in enumerate(names):
        w = obj.weight(kind, key)
        if w:
            c[i] = w
    n = len(names)
    stages = [(c, True)]
    if obj.equalize:
        extra, cols = _spread_rows(instance, system, index, n)
        if cols:
            n += len(cols)
            rows += extra
            stages.append(({d: 1 for d in cols}, False))
    done = set()
    for ag in system.agents:
        if ag.route is not None and ag.group not in done:
            done.add(ag.group)
            stages.append(({index[("u", ag.id)]: 1}, obj.refine == "max"))
    res = solve_lexicographic(n, stages, rows, exact=exact, tol=tol * 1e-2)
    if res.status == INFEASIBLE:
        return AllocationOutcome({}, {}, obj.name, None, STATUS_EMPTY, 1)
    if res.status != OPTIMAL:
        raise AllocationError(f"allocation LP {res.status}")
    u = {ag.id: zero for ag in system.agents}
    v = {r.id: zero for r in instance.routes}
    for (kind, key), val in zip(names, res.x):
        if kind == "u":
            u[key] = val
        else:
            v[key] = val
    value = sum((obj.weight("u", k) * val for k, val in u.items()), zero) + \
        sum((obj.weight("v", k) * val for k, val in v.items()), zero)
    return AllocationOutcome(u, v, obj.name, value, STATUS_OPTIMAL, len(stages))


def solve_allocation(instance: ProblemInstance, assignment: Assignment, objective="user", *,
                     exact: bool = True, tol: float = 1e-7, ownership: Mapping[str, str] | None = None,
                     symmetry: bool | None = None, max_coalitions: int | None = None) -> AllocationOutcome:
    """Optimize ``objective`` over the stable set of ``assignment``.

    Ties inside the optimal face are broken as described on
    :class:`Objective`, so the returned vertex is deterministic.
    """
    system = build_stability_system(instance, assignment, ownership, symmetry, max_coalitions)
    return solve_system(instance, system, objective, exact=exact, tol=tol)


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    reason: str = ""
    route: str | None = None
    members: tuple = ()
    lhs: object = None
    rhs: object = None

    def __bool__(self) -> bool:
        return self.stable


def check_stability(instance: ProblemInstance, assignment: Assignment, u: Mapping[str, object],
                    v: Mapping[str, object], tol: float = 1e-7,
                    ownership: Mapping[str, str] | None = None) -> StabilityVerdict:
    """Re-derive feasibility and every coalition constraint from scratch.

    Coalitions are enumerated over concrete agents with plain subset
    enumeration; nothing from the allocation LP is reused.
    """
    agents = expand_agents(instance, assignment)
    where = {ag.id: ag.route for ag in agents}
    group = {ag.id: ag.group for ag in agents}
    get_u = lambda k: u.get(k, 0)  # noqa: E731
    get_v = lambda k: v.get(k, 0)  # noqa: E731

    for ag in agents:
        if get_u(ag.id) < -tol:
            return StabilityVerdict(False, "negative user profit", members=(ag.id,), lhs=get_u(ag.id))
        if ag.route is None and abs(get_u(ag.id)) > tol:
            return StabilityVerdict(False, "unmatched agent with profit", members=(ag.id,), lhs=get_u(ag.id))
    for r in instance.routes:
        val = get_v(r.id)
        if val < -tol:
            return StabilityVerdict(False, "negative operator profit", route=r.id, lhs=val)
        members = [ag.id for ag in agents if ag.route == r.id]
        if not members:
            if abs(val) > tol:
                return StabilityVerdict(False, "unused route with profit", route=r.id, lhs=val)
            continue
        lhs = sum(get_u(m) for m in members) + val
        rhs = sum(instance.payoff[(group[m], r.id)] for m in members) - instance.route_cost[r.id]
        if abs(lhs - rhs) > tol:
            return StabilityVerdict(False, "feasibility equality violated", r.id, tuple(members), lhs, rhs)

    for r in sorted(instance.routes, key=lambda r: r.id):
        cand = [ag.id for ag in agents
                if instance.geometry[(group[ag.id], r.id)].compatible
                and instance.payoff[(group[ag.id], r.id)] > 0]
        legs = {m: instance.geometry[(group[m], r.id)].leg_indices for m in cand}
        for size in range(1, len(cand) + 1):
            any_feasible = False
            for combo in itertools.combinations(cand, size):
                load = [0] * len(r.legs)
                for m in combo:
                    for l in legs[m]:
                        load[l] += 1
                if max(load, default=0) > r.capacity:
                    continue
                any_feasible = True
                if ownership is not None:
                    owner = ownership[r.id]
                    if all(where[m] is not None and ownership[where[m]] == owner for m in combo):
                        continue
                lhs = sum(get_u(m) for m in combo) + get_v(r.id)
                rhs = sum(instance.payoff[(group[m], r.id)] for m in combo) - instance.route_cost[r.id]
                if lhs < rhs - tol:
                    return StabilityVerdict(False, "blocking coalition", r.id, combo, lhs, rhs)
            if not any_feasible:
                break
    return StabilityVerdict(True)


def feasibility_scan(instance: ProblemInstance, assignment: Assignment,
                     ownership: Mapping[str, str] | None = None) -> bool:
    """Independent non-emptiness test of the stable set.

    Builds the complete system over concrete agents (no symmetry reduction,
    no row pruning) and asks HiGHS for any feasible point.
    """
    import numpy as np
    from scipy.optimize import linprog

    agents = expand_agents(instance, assignment)
    names = [("u", ag.id) for ag in agents] + [("v", r.id) for r in instance.routes]
    index = {k: i for i, k in enumerate(names)}
    where = {ag.id: ag.route for ag in agents}
    group = {ag.id: ag.group for ag in agents}
    A_ub, b_ub, A_eq, b_eq = [], [], [], []

    def vec(entries):
        row = np.zeros(len(names))
        for k in entries:
            row[index[k]] = 1
        return row

    for ag in agents:
        if ag.route is None:
            A_eq.append(vec([("u", ag.id)]))
            b_eq.append(0.0)
    for r in instance.routes:
        members = [ag.id for ag in agents if ag.route == r.id]
        if members:
            A_eq.append(vec([("u", m) for m in members] + [("v", r.id)]))
            b_eq.append(float(sum(instance.payoff[(group[m], r.id)] for m in members) - instance.route_cost[r.id]))
        else:
            A_eq.append(vec([("v", r.id)]))
            b_eq.append(0.0)
        cand = [ag.id for ag in agents
                if instance.geometry[(group[ag.id], r.id)].compatible and instance.payoff[(group[ag.id], r.id)] > 0]
        for size in range(1, len(cand) + 1):
            for combo in itertools.combinations(cand, size):
                load = [0] * len(r.legs)
                for m in combo:
                    for l in instance.geometry[(group[m], r.id)].leg_indices:
                        load[l] += 1
                if max(load, default=0) > r.capacity:
                    continue
                if ownership is not None:
                    owner = ownership[r.id]
                    if all(where[m] is not None and ownership[where[m]] == owner for m in combo):
                        continue
                A_ub.append(-vec([("u", m) for m in combo] + [("v", r.id)]))
                b_ub.append(-float(sum(instance.payoff[(group[m], r.id)] for m in combo) - instance.route_cost[r.id]))
    res = linprog(np.zeros(len(names)),
                  A_ub=np.array(A_ub) if A_ub else None, b_ub=np.array(b_ub) if b_ub else None,
                  A_eq=np.array(A_eq) if A_eq else None, b_eq=np.array(b_eq) if b_eq else None,
                  bounds=[(0, None)] * len(names), method="highs")
    if res.status not in (0, 2):
        raise AllocationError(f"feasibility scan failed: {res.message}")
    return res.status == 0


@dataclass(frozen=True)
class PriceSchedule:
    prices: Mapping[str, tuple]  # agent id -> (route id, price)
    revenue: Mapping[str, object]  # used route id -> sum of prices
    objective: str = ""

    def price(self, agent_id: str):
        return self.prices[agent_id][1]


def compute_prices(instance: ProblemInstance, assignment: Assignment, outcome: AllocationOutcome,
                   tol: float = 1e-6) -> PriceSchedule:
    """Ticket price per matched agent: ``U - t - g - u``."""
    if outcome.status != STATUS_OPTIMAL:
        raise AllocationError("no prices for an empty core")
    prices, revenue = {}, {}
    for ag in expand_agents(instance, assignment):
        if ag.route is None:
            continue
        s = instance.user(ag.group)
        base = s.utility_for(ag.route) - instance.t[(s.id, ag.route)] - s.min_benefit
        u = outcome.u[ag.id]
        p = base - u if isinstance(u, Fraction) else float(base) - u
        prices[ag.id] = (ag.route, p)
        revenue[ag.route] = revenue.get(ag.route, 0) + p
    for rid, total in revenue.items():
        r = instance.route(rid)
        n = sum(assignment.riders(rid).values())
        expect = instance.route_cost[rid] + outcome.v[rid] + n * instance.operator_benefit(r)
        if abs(total - expect) > tol:
            raise AllocationError(f"revenue identity fails on route {rid}: {total} != {expect}")
    return PriceSchedule(prices, revenue, outcome.objective)


def allocation_gap(user_opt: PriceSchedule, op_opt: PriceSchedule) -> list:
    """Per-agent ``operator-optimal price - user-optimal price``, largest first.

    Gaps are expected to be non-negative; a negative entry is returned as is
    so callers can report it.
    """
    if set(user_opt.prices) != set(op_opt.prices):
        raise AllocationError("price schedules cover different agents")
    gaps = []
    for aid, (rid, p_user) in user_opt.prices.items():
        rid2, p_op = op_opt.prices[aid]
        if rid != rid2:
            raise AllocationError(f"agent {aid} is on different routes in the two schedules")
        gaps.append((aid, p_op - p_user))
    gaps.sort(key=lambda item: (-item[1], item[0]))
    return gaps


def convex_combination(o1: AllocationOutcome, o2: AllocationOutcome, lam) -> AllocationOutcome:
    if not 0 <= lam <= 1:
        raise AllocationError("lambda must lie in [0, 1]")
    if o1.status != STATUS_OPTIMAL or o2.status != STATUS_OPTIMAL:
        raise AllocationError("both outcomes must be stable")
    if set(o1.u) != set(o2.u) or set(o1.v) != set(o2.v):
        raise AllocationError("outcomes belong to different assignments")
    if isinstance(lam, float) and all(isinstance(x, Fraction) for x in o1.u.values()):
        lam = Fraction(repr(lam))
    u = {k: lam * o1.u[k] + (1 - lam) * o2.u[k] for k in o1.u}
    v = {k: lam * o1.v[k] + (1 - lam) * o2.v[k] for k in o1.v}
    return AllocationOutcome(u, v, f"mix({o1.objective},{o2.objective},{lam})", None, STATUS_OPTIMAL)


def used_groups(outcome: AllocationOutcome) -> Iterable[str]:
    return sorted(outcome.u)


def infeasibility_certificate(system: StabilitySystem, exact: bool = False, tol: float = 1e-9) -> list:
    """A minimal set of coalitions that, with the feasibility equalities, admits no stable outcome.

    Deletion filter: drop each coalition row in turn and keep it out if the
    rest is still infeasible. Returns ``[]`` when the system is feasible.
    """
    if system.trivially_infeasible is not None:
        return [system.trivially_infeasible]
    names = system.names
    index = {k: i for i, k in enumerate(names)}
    eq = [({index[k]: c for k, c in coefs.items()}, "=", rhs) for coefs, rhs, _ in system.equalities]
    ineq = [({index[k]: c for k, c in coefs.items()}, ">=", rhs, co) for coefs, rhs, co in system.inequalities]

    def infeasible(rows) -> bool:
        res = solve_lexicographic(len(names), [({}, True)], eq + [r[:3] for r in rows], exact=exact, tol=tol)
        return res.status == INFEASIBLE

    if not infeasible(ineq):
        return []
    keep = list(ineq)
    i = 0
    while i < len(keep):
        trial = keep[:i] + keep[i + 1:]
        if infeasible(trial):
            keep = trial
        else:
            i += 1
    return [r[3] for r in keep]
