"""Capacitated many-to-one assignment of traveler groups to routes.

The integer program maximizes total payoff where every route with no
riders is matched to a dummy user worth its operating cost::

    max  sum a_sr x_sr + sum C_r x_kr
    s.t. sum_r x_sr <= q_s                      (demand, per group)
         sum_s [leg used] x_sr <= w_r           (capacity, per route leg)
         sum_s x_sr <= M_r (1 - x_kr)           (big-M, per route)

Internally the dummy flag is carried as ``y_r = 1 - x_kr`` ("route open").
Only compatible pairs with a positive payoff get an ``x`` variable; any
other pair can only consume capacity or close a dummy, so it is never part
of an optimum.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LPError, solve_lp
from .model import ProblemInstance


class SizeGuardError(ValueError):
    pass


class InfeasibleAssignmentError(ValueError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    exact: bool = True
    tol: float = 1e-6
    backend: str = "embedded"  # or "highs"
    max_users: int | None = None
    max_routes: int | None = None
    max_nodes: int = 500_000


@dataclass
class AssignmentModel:
    instance: ProblemInstance
    route_order: tuple  # route ids, sorted
    pairs: tuple  # (user id, route id) per x variable
    var_names: tuple  # ("y", rid) or ("x", sid, rid), branching order
    demand_rows: list = field(default_factory=list)  # (sid, [vars], q)
    capacity_rows: list = field(default_factory=list)  # (rid, leg, [vars], w)
    bigm_rows: list = field(default_factory=list)  # (rid, [vars], y var, M)
    exclusive_rows: list = field(default_factory=list)  # (label, [y vars]) at most one open
    ordering_rows: list = field(default_factory=list)  # (label, [later y vars], [earlier y vars])
    pair_cuts: list = field(default_factory=list)  # (x var, y var, bound): x <= bound * y

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    def y_var(self, rid: str) -> int:
        return self._index[("y", rid)]

    def x_var(self, sid: str, rid: str) -> int | None:
        return self._index.get(("x", sid, rid))

    def __post_init__(self):
        self._index = {name: i for i, name in enumerate(self.var_names)}

    def row_counts(self) -> tuple:
        """(demand rows, capacity rows, big-M rows)."""
        return len(self.demand_rows), len(self.capacity_rows), len(self.bigm_rows)

    def objective(self) -> dict:
        inst = self.instance
        obj = {}
        for i, name in enumerate(self.var_names):
            if name[0] == "x":
                obj[i] = inst.payoff[(name[1], name[2])]
            else:
                c = inst.route_cost[name[1]]
                if c:
                    obj[i] = -c
        return obj

    def constant(self) -> Fraction:
        return sum(self.instance.route_cost.values(), Fraction(0))

    def rows(self, cuts: bool = True) -> list:
        """Linear rows over the internal variables.

        ``cuts`` adds the per-pair bounds ``x_sr <= min(q_s, w_r) y_r``. They
        are implied for integer points but tighten the relaxation.
        """
        out = []
        for _, vars_, q in self.demand_rows:
            if vars_:
                out.append(({v: 1 for v in vars_}, "<=", q))
        for _, _, vars_, w in self.capacity_rows:
            if vars_:
                out.append(({v: 1 for v in vars_}, "<=", w))
        for _, vars_, yv, M in self.bigm_rows:
            row = {v: 1 for v in vars_}
            row[yv] = -M
            out.append((row, "<=", 0))
        for _, yvars in self.exclusive_rows:
            out.append(({v: 1 for v in yvars}, "<=", 1))
        for _, later, earlier in self.ordering_rows:
            row = {v: 1 for v in later}
            for v in earlier:
                row[v] = row.get(v, 0) - 1
            out.append((row, "<=", 0))
        if cuts:
            for xv, yv, bound in self.pair_cuts:
                out.append(({xv: 1, yv: -bound}, "<=", 0))
        return out


def build_model(instance: ProblemInstance) -> AssignmentModel:
    routes = sorted(instance.routes, key=lambda r: r.id)
    users = sorted(instance.users, key=lambda s: s.id)
    total_q = sum(s.demand for s in users)
    names, pairs = [], []
    for r in routes:
        names.append(("y", r.id))
        for s in users:
            if instance.geometry[(s.id, r.id)].compatible and instance.payoff[(s.id, r.id)] > 0:
                names.append(("x", s.id, r.id))
                pairs.append((s.id, r.id))
    model = AssignmentModel(instance, tuple(r.id for r in routes), tuple(pairs), tuple(names))
    for s in users:
        vars_ = [model.x_var(s.id, r.id) for r in routes if model.x_var(s.id, r.id) is not None]
        model.demand_rows.append((s.id, vars_, s.demand))
    for r in routes:
        riders = [(s, model.x_var(s.id, r.id)) for s in users if model.x_var(s.id, r.id) is not None]
        for leg in range(len(r.legs)):
            vars_ = [v for s, v in riders if leg in instance.geometry[(s.id, r.id)].leg_indices]
            model.capacity_rows.append((r.id, leg, vars_, r.capacity))
        M = min(total_q, r.capacity * len(r.legs))
        model.bigm_rows.append((r.id, [v for _, v in riders], model.y_var(r.id), M))
        for s, v in riders:
            model.pair_cuts.append((v, model.y_var(r.id), min(s.demand, r.capacity)))
    return model


@dataclass(frozen=True)
class Assignment:
    x: Mapping[tuple, int]  # (user id, route id) -> riders; nonzero entries only
    dummy: Mapping[str, int]  # route id -> 1 if matched to the dummy user
    used_routes: tuple
    link_loads: Mapping[tuple, int]  # (route id, leg index) -> riders
    objective_raw: Fraction
    objective_net: Fraction
    nodes_explored: int = 0

    def riders(self, rid: str) -> dict:
        return {s: k for (s, r), k in self.x.items() if r == rid}

    def routes_of(self, sid: str) -> dict:
        return {r: k for (s, r), k in self.x.items() if s == sid}

    def key(self) -> tuple:
        return tuple(sorted(self.x.items()))


def assignment_from_counts(instance: ProblemInstance, counts: Mapping[tuple, int]) -> Assignment:
    """Build an :class:`Assignment` (with objectives and loads) from rider counts."""
    x = {k: int(v) for k, v in counts.items() if v}
    loads = {}
    for r in instance.routes:
        for leg in range(len(r.legs)):
            loads[(r.id, leg)] = 0
    for (sid, rid), k in x.items():
        g = instance.geometry.get((sid, rid))
        if g is None or not g.compatible:
            raise InfeasibleAssignmentError(f"user {sid} cannot ride route {rid}")
        for leg in g.leg_indices:
            loads[(rid, leg)] += k
    used = tuple(sorted({rid for (_, rid) in x}))
    dummy = {r.id: 0 if r.id in used else 1 for r in instance.routes}
    raw = sum((instance.payoff[k] * v for k, v in x.items()), Fraction(0))
    raw += sum((instance.route_cost[r] for r, d in dummy.items() if d), Fraction(0))
    net = sum((instance.net_value(instance.user(s), instance.route(r)) * v for (s, r), v in x.items()),
              Fraction(0))
    net -= sum((instance.route_cost[r] for r in used), Fraction(0))
    return Assignment(x, dummy, used, loads, raw, net)


def check_feasible(assignment: Assignment, instance: ProblemInstance,
                   exclusive_groups: Sequence[Sequence[str]] = ()) -> None:
    """Raise :class:`InfeasibleAssignmentError` unless every constraint holds."""
    for s in instance.users:
        total = sum(k for (sid, _), k in assignment.x.items() if sid == s.id)
        if total > s.demand:
            raise InfeasibleAssignmentError(f"user {s.id} assigned {total} > demand {s.demand}")
    for (sid, rid), k in assignment.x.items():
        if k < 0:
            raise InfeasibleAssignmentError("negative rider count")
        if not instance.geometry[(sid, rid)].compatible:
            raise InfeasibleAssignmentError(f"user {sid} cannot ride route {rid}")
    for r in instance.routes:
        for leg in range(len(r.legs)):
            if assignment.link_loads.get((r.id, leg), 0) > r.capacity:
                raise InfeasibleAssignmentError(f"route {r.id} leg {leg} over capacity")
        riders = sum(assignment.riders(r.id).values())
        if assignment.dummy.get(r.id, 0) and riders:
            raise InfeasibleAssignmentError(f"route {r.id} has riders and the dummy")
    for group in exclusive_groups:
        if sum(1 for rid in group if rid in assignment.used_routes) > 1:
            raise InfeasibleAssignmentError(f"more than one active path in {sorted(group)}")


def objective_decomposition(assignment: Assignment, instance: ProblemInstance) -> dict:
    check_feasible(assignment, instance)
    fresh = assignment_from_counts(instance, assignment.x)
    surplus = {}
    for rid in fresh.used_routes:
        surplus[rid] = sum((instance.payoff[(s, rid)] * k for s, k in fresh.riders(rid).items()),
                           Fraction(0)) - instance.route_cost[rid]
    return {
        "objective_raw": fresh.objective_raw,
        "objective_net": fresh.objective_net,
        "per_route_surplus": surplus,
    }


def _guard(instance: ProblemInstance, options: SolverOptions) -> None:
    if options.max_users is not None and len(instance.users) > options.max_users:
        raise SizeGuardError(f"{len(instance.users)} user groups exceed cap {options.max_users}")
    if options.max_routes is not None and len(instance.routes) > options.max_routes:
        raise SizeGuardError(f"{len(instance.routes)} routes exceed cap {options.max_routes}")


def _solve_bounded(model: AssignmentModel, base_rows: list, objective: dict, bounds: dict,
                   exact: bool, tol: float):
    """Solve the LP relaxation under per-variable ``(lo, hi)`` bounds.

    Variables with ``lo == hi`` are substituted out; ``lo > 0`` is handled by
    shifting. Returns ``(status, x_full, value)`` with the value excluding the
    dummy constant.
    """
    n = model.n_vars
    lo = [0] * n
    hi = [None] * n
    for v, (l, h) in bounds.items():
        lo[v], hi[v] = l, h
    free = [v for v in range(n) if hi[v] is None or hi[v] > lo[v]]
    pos = {v: i for i, v in enumerate(free)}
    rows = []
    for coefs, sense, rhs in base_rows:
        row = {}
        for v, c in coefs.items():
            if lo[v]:
                rhs -= c * lo[v]
            if v in pos:
                row[pos[v]] = c
        rows.append((row, sense, rhs))
    for v in free:
        if hi[v] is not None:
            rows.append(({pos[v]: 1}, "<=", hi[v] - lo[v]))
    obj = {pos[v]: c for v, c in objective.items() if v in pos}
    shift = sum((c * lo[v] for v, c in objective.items() if lo[v]), Fraction(0))
    res = solve_lp(len(free), obj, rows, exact=exact, tol=tol * 1e-3)
    if res.status == INFEASIBLE:
        return INFEASIBLE, None, None
    if res.status == UNBOUNDED:
        raise LPError("assignment relaxation unbounded")
    full = [lo[v] for v in range(n)]
    for v, i in pos.items():
        full[v] = lo[v] + res.x[i]
    value = res.objective + (shift if exact else float(shift))
    return OPTIMAL, full, value


def lp_relaxation(model: AssignmentModel, exact: bool = True, tol: float = 1e-6):
    """Objective of the continuous relaxation (including the dummy constant)."""
    status, x, value = _solve_bounded(model, model.rows(), model.objective(), {}, exact, tol)
    if status != OPTIMAL:
        raise LPError("relaxation infeasible")
    const = model.constant()
    return value + (const if exact else float(const))


def _is_integral(value, exact: bool, tol: float) -> bool:
    if exact:
        return value.denominator == 1
    return abs(value - round(value)) <= tol


def _extract(model: AssignmentModel, x: list, exact: bool) -> dict:
    counts = {}
    for i, name in enumerate(model.var_names):
        if name[0] == "x":
            k = int(x[i]) if exact else int(round(x[i]))
            if k:
                counts[(name[1], name[2])] = k
    return counts


def solve_assignment(instance_or_model, options: SolverOptions | None = None) -> Assignment:
    """Exact branch and bound over the LP relaxation.

    Best-bound node selection, branching on the lowest-index fractional
    variable (variables ordered by route id, then user id), up-branch first.
    Among equally good integer solutions the first one found is kept, so the
    result is deterministic for fixed options.
    """
    options = options or SolverOptions()
    model = instance_or_model if isinstance(instance_or_model, AssignmentModel) else build_model(instance_or_model)
    instance = model.instance
    _guard(instance, options)
    if options.backend == "highs":
        return _solve_highs(model, options)
    if options.backend != "embedded":
        raise ValueError(f"unknown backend {options.backend!r}")

    exact, tol = options.exact, options.tol
    base_rows = model.rows()
    objective = model.objective()
    const = model.constant()

    best_counts: dict = {}
    best_val = Fraction(0) if exact else 0.0  # all routes dummy-matched
    counter = itertools.count()
    heap = [(0, next(counter), {})]
    explored = 0
    while heap:
        neg_bound, _, bounds = heapq.heappop(heap)
        if explored and -neg_bound <= best_val + (0 if exact else tol):
            continue
        explored += 1
        if explored > options.max_nodes:
            raise SizeGuardError("branch-and-bound node limit reached")
        status, x, value = _solve_bounded(model, base_rows, objective, bounds, exact, tol)
        if status != OPTIMAL or value <= best_val + (0 if exact else tol):
            continue
        branch = next((v for v in range(model.n_vars) if not _is_integral(x[v], exact, tol)), None)
        if branch is None:
            best_val = value
            best_counts = _extract(model, x, exact)
            continue
        f = x[branch]
        down, up = math.floor(f), math.ceil(f)
        lo, hi = bounds.get(branch, (0, None))
        up_bounds = dict(bounds)
        up_bounds[branch] = (up, hi)
        down_bounds = dict(bounds)
        down_bounds[branch] = (lo, down)
        if model.var_names[branch][0] == "y" and down == 0:
            # a closed route carries no riders
            rid = model.var_names[branch][1]
            for sid, r in model.pairs:
                if r == rid:
                    down_bounds[model.x_var(sid, rid)] = (0, 0)
        heapq.heappush(heap, (-value, next(counter), up_bounds))
        heapq.heappush(heap, (-value, next(counter), down_bounds))

    result = assignment_from_counts(instance, best_counts)
    check_feasible(result, instance, [[model.var_names[v][1] for v in ys] for _, ys in model.exclusive_rows])
    expected = best_val + (const if exact else float(const))
    if exact and result.objective_raw != expected:
        raise LPError("extracted assignment does not reproduce the search objective")
    return Assignment(result.x, result.dummy, result.used_routes, result.link_loads,
                      result.objective_raw, result.objective_net, explored)


def _solve_highs(model: AssignmentModel, options: SolverOptions) -> Assignment:
    import numpy as np
    from scipy.optimize import Bounds, LinearConstraint, milp

    n = model.n_vars
    c = np.zeros(n)
    for v, a in model.objective().items():
        c[v] = -float(a)
    rows = model.rows()
    A = np.zeros((len(rows), n))
    ub = np.zeros(len(rows))
    for i, (coefs, _, rhs) in enumerate(rows):
        for v, a in coefs.items():
            A[i, v] = float(a)
        ub[i] = float(rhs)
    upper = np.full(n, np.inf)
    for i, name in enumerate(model.var_names):
        if name[0] == "y":
            upper[i] = 1
    cons = [LinearConstraint(A, -np.inf, ub)] if len(rows) else []
    res = milp(c, constraints=cons, integrality=np.ones(n), bounds=Bounds(np.zeros(n), upper))
    if res.status != 0:
        raise LPError(f"HiGHS failed: {res.message}")
    counts = _extract(model, list(res.x), exact=False)
    return assignment_from_counts(model.instance, counts)


@dataclass
class BruteForceResult:
    best: Assignment
    optimum: list  # every maximizing Assignment
    objective: Fraction
    evaluated: int


def brute_force_assignment(instance: ProblemInstance, exclusive_groups: Sequence[Sequence[str]] = (),
                           max_units: int = 10, max_routes: int = 10) -> BruteForceResult:
    """Enumerate every capacity-feasible integer assignment.

    Every compatible pair is a candidate here, including zero-payoff ones,
    so the oracle does not share the solver's variable pruning. The
    representative optimum is the one with the fewest riders, then the
    smallest sorted ``(user, route)`` key.
    """
    units = sum(s.demand for s in instance.users)
    if units > max_units or len(instance.routes) > max_routes:
        raise SizeGuardError("instance too large for exhaustive enumeration")
    routes = {r.id: r for r in instance.routes}
    users = sorted(instance.users, key=lambda s: s.id)
    options = []
    for s in users:
        opts = [None] + sorted(r.id for r in instance.routes if instance.geometry[(s.id, r.id)].compatible)
        options.append(list(itertools.combinations_with_replacement(opts, s.demand)))
    groups = [set(g) for g in exclusive_groups]

    best_val = None
    best = []
    evaluated = 0
    loads: dict = {}

    def rec(i: int, counts: dict):
        nonlocal best_val, best, evaluated
        if i == len(users):
            used = {rid for (_, rid) in counts}
            if any(len(g & used) > 1 for g in groups):
                return
            evaluated += 1
            val = sum((instance.payoff[k] * v for k, v in counts.items()), Fraction(0))
            val += sum((instance.route_cost[rid] for rid in routes if rid not in used), Fraction(0))
            if best_val is None or val > best_val:
                best_val, best = val, [dict(counts)]
            elif val == best_val:
                best.append(dict(counts))
            return
        s = users[i]
        for combo in options[i]:
            chosen = [rid for rid in combo if rid is not None]
            touched = []
            ok = True
            for rid in chosen:
                for leg in instance.geometry[(s.id, rid)].leg_indices:
                    key = (rid, leg)
                    loads[key] = loads.get(key, 0) + 1
                    touched.append(key)
                    if loads[key] > routes[rid].capacity:
                        ok = False
            if ok:
                for rid in chosen:
                    counts[(s.id, rid)] = counts.get((s.id, rid), 0) + 1
                rec(i + 1, counts)
                for rid in chosen:
                    counts[(s.id, rid)] -= 1
                    if not counts[(s.id, rid)]:
                        del counts[(s.id, rid)]
            for key in touched:
                loads[key] -= 1

    rec(0, {})
    optimum = [assignment_from_counts(instance, c) for c in best]
    optimum.sort(key=lambda a: (sum(a.x.values()), a.key()))
    return BruteForceResult(optimum[0], optimum, best_val, evaluated)
