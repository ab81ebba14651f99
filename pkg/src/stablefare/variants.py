"""Multi-route operators, vehicle fleets with candidate paths, and the 3-node fleet fixture."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

from ._num import frac
from .assignment import Assignment, AssignmentModel, SolverOptions, build_model, solve_assignment
from .core import (
    OPERATOR_OPTIMAL,
    STATUS_OPTIMAL,
    USER_OPTIMAL,
    AllocationOutcome,
    PriceSchedule,
    StabilitySystem,
    build_stability_system,
    compute_prices,
    solve_system,
)
from .model import CostParams, CostRule, Network, ProblemInstance, Route, UserGroup, ValidationError, validate_instance


@dataclass(frozen=True)
class Vehicle:
    id: str
    initial_node: object
    paths: tuple  # candidate node sequences
    capacity: int = 2


@dataclass(frozen=True)
class Operator:
    id: str
    routes: tuple = ()  # route ids owned outright
    vehicles: tuple = ()
    min_benefit: Fraction = Fraction(0)


def path_route_id(operator_id: str, vehicle_id: str, path: Sequence) -> str:
    return f"{operator_id}/{vehicle_id}/" + "-".join(str(n) for n in path)


def fleet_routes(operators: Sequence[Operator]) -> list:
    """One route per (vehicle, candidate path), dispatched from the vehicle's start node."""
    routes = []
    for op in operators:
        for veh in op.vehicles:
            for path in veh.paths:
                routes.append(Route(path_route_id(op.id, veh.id, path), tuple(path), veh.capacity,
                                    operator_id=op.id, vehicle_id=veh.id, dispatch_node=veh.initial_node,
                                    min_operator_benefit=frac(op.min_benefit)))
    return routes


def ownership_map(instance: ProblemInstance, operators: Sequence[Operator] | None = None) -> dict:
    """Route id -> operator id, from explicit operator lists or each route's ``operator_id``."""
    owner = {}
    for op in operators or ():
        for rid in op.routes:
            if rid in owner:
                raise ValidationError(f"route {rid} owned by two operators")
            owner[rid] = op.id
    for r in instance.routes:
        if r.id not in owner and r.operator_id is not None:
            owner[r.id] = r.operator_id
    missing = [r.id for r in instance.routes if r.id not in owner]
    if missing:
        raise ValidationError(f"unowned routes: {', '.join(missing)}")
    return owner


def centralized_stability_system(instance: ProblemInstance, assignment: Assignment,
                                 ownership: Mapping[str, str], max_coalitions: int | None = None) -> StabilitySystem:
    """Stability rows kept only for coalitions that poach from a rival operator."""
    missing = [r.id for r in instance.routes if r.id not in ownership]
    if missing:
        raise ValidationError(f"unowned routes: {', '.join(missing)}")
    return build_stability_system(instance, assignment, ownership=ownership, max_coalitions=max_coalitions)


def vehicle_groups(instance: ProblemInstance) -> dict:
    """(operator id, vehicle id) -> sorted route ids of that vehicle's candidate paths."""
    groups: dict = {}
    for r in instance.routes:
        if r.vehicle_id is not None:
            groups.setdefault((r.operator_id, r.vehicle_id), []).append(r.id)
    return {k: sorted(v) for k, v in sorted(groups.items(), key=lambda kv: tuple(map(str, kv[0])))}


def add_vehicle_path_constraints(model: AssignmentModel, operators: Sequence[Operator] | None = None) -> AssignmentModel:
    """At most one active path per vehicle.

    Vehicles of one operator with the same start node and candidate paths are
    interchangeable; for those, vehicle ``i+1`` may only run a path if vehicle
    ``i`` does, which removes mirror-image optima without changing the value.
    """
    inst = model.instance
    groups = vehicle_groups(inst)
    if operators is not None:
        declared = {(op.id, v.id) for op in operators for v in op.vehicles}
        for key in groups:
            if key not in declared:
                raise ValidationError(f"vehicle {key} is not declared by any operator")
    orphans = [r.id for r in inst.routes if r.vehicle_id is None]
    if groups and orphans:
        raise ValidationError(f"paths not assigned to any vehicle: {', '.join(orphans)}")
    for (op, veh), rids in groups.items():
        model.exclusive_rows.append((f"{op}/{veh}", [model.y_var(rid) for rid in rids]))

    def signature(rids):
        r0 = inst.route(rids[0])
        return (r0.operator_id, r0.dispatch_node, r0.capacity,
                tuple(sorted((r.nodes, inst.route_cost[r.id], inst.operator_benefit(r))
                             for r in map(inst.route, rids))))

    by_sig: dict = {}
    for key, rids in groups.items():
        by_sig.setdefault(signature(rids), []).append(key)
    for keys in by_sig.values():
        for prev, nxt in zip(keys, keys[1:]):
            model.ordering_rows.append((f"{nxt[1]}<={prev[1]}",
                                        [model.y_var(r) for r in groups[nxt]],
                                        [model.y_var(r) for r in groups[prev]]))
    return model


@dataclass
class FleetResult:
    instance: ProblemInstance
    assignment: Assignment
    ownership: dict
    outcomes: dict = field(default_factory=dict)  # "user" / "operator" -> AllocationOutcome
    prices: dict = field(default_factory=dict)  # "user" / "operator" -> PriceSchedule

    @property
    def status(self) -> str:
        return self.outcomes["user"].status


def solve_fleet_scenario(instance: ProblemInstance, operators: Sequence[Operator] | None = None,
                         options: SolverOptions | None = None, tol: float = 1e-7,
                         allocate: bool = True, assignment: Assignment | None = None) -> FleetResult:
    """Assignment with one path per vehicle, then rival-filtered user- and operator-optimal prices."""
    options = options or SolverOptions()
    if assignment is None:
        model = add_vehicle_path_constraints(build_model(instance), operators)
        assignment = solve_assignment(model, options)
    ownership = ownership_map(instance, operators)
    result = FleetResult(instance, assignment, ownership)
    if not allocate:
        return result
    system = centralized_stability_system(instance, assignment, ownership)
    for name, obj in (("user", USER_OPTIMAL), ("operator", OPERATOR_OPTIMAL)):
        out: AllocationOutcome = solve_system(instance, system, obj, exact=options.exact, tol=tol)
        result.outcomes[name] = out
        if out.status == STATUS_OPTIMAL:
            result.prices[name] = compute_prices(instance, assignment, out)
    return result


# --- the 3-node, two-operator fleet example -------------------------------------------

THREE_NODE_USERS = ((1, 2), (1, 3), (2, 3), (3, 2))
OPERATOR_1_PATHS = ((1, 2), (1, 3), (1, 2, 3), (1, 3, 2), (1, 2, 3, 1), (1, 3, 2, 1))
OPERATOR_2_PATHS = ((3, 2), (3, 1, 2), (3, 2, 1), (3, 1, 2, 3), (3, 2, 1, 3))
FLEET_REFERENCE = {
    "routes": {(1, 2): "o1/v1/1-2-3", (1, 3): "o1/v1/1-2-3", (2, 3): "o1/v1/1-2-3", (3, 2): "o2/v1/3-2"},
    "wait": {(1, 2): Fraction(0), (1, 3): Fraction(0), (2, 3): Fraction("4.5"), (3, 2): Fraction(0)},
    "ride": {(1, 2): Fraction("4.5"), (1, 3): Fraction("7.5"), (2, 3): Fraction(3), (3, 2): Fraction(3)},
    "user_prices": {(1, 2): Fraction("1.5"), (1, 3): Fraction("1.5"), (2, 3): Fraction("1.5"), (3, 2): Fraction("1.8")},
    "operator_prices": {(1, 2): Fraction("5.55"), (1, 3): Fraction("2.25"), (2, 3): Fraction("8.55"),
                        (3, 2): Fraction("1.8")},
}


def od_user_id(o, d) -> str:
    return f"u{o}{d}"


def three_node_fleet(link_13_miles=5, b1=0, b2=0, speed_mph=40, utility=20,
                     params: CostParams | None = None):
    """Two operators, two vehicles each, capacity 2, on the 1-2-3 triangle.

    Links 1-2 and 2-3 are 3 and 2 miles; the direct 1-3 link length is free.
    Returns ``(instance, operators)``.
    """
    miles = {(1, 2): Fraction(3), (2, 3): Fraction(2), (1, 3): frac(link_13_miles)}
    minutes_per_mile = Fraction(60) / frac(speed_mph)
    links = []
    for (i, j), d in miles.items():
        links.append((i, j, d * minutes_per_mile, d))
        links.append((j, i, d * minutes_per_mile, d))
    net = Network.build([1, 2, 3], links)
    operators = (
        Operator("o1", vehicles=(Vehicle("v1", 1, OPERATOR_1_PATHS), Vehicle("v2", 1, OPERATOR_1_PATHS)),
                 min_benefit=frac(b1)),
        Operator("o2", vehicles=(Vehicle("v1", 3, OPERATOR_2_PATHS), Vehicle("v2", 3, OPERATOR_2_PATHS)),
                 min_benefit=frac(b2)),
    )
    users = [UserGroup(od_user_id(o, d), o, d, 1, frac(utility)) for o, d in THREE_NODE_USERS]
    params = params or CostParams(tvot=Fraction("0.4"), wait_multiplier=Fraction("1.25"),
                                  op_cost_per_mile=Fraction("0.9"))
    rule = CostRule.per_mile(params.op_cost_per_mile)
    inst = validate_instance(net, fleet_routes(operators), users, params, rule)
    return inst, operators


@dataclass(frozen=True)
class CalibrationPoint:
    link_miles: Fraction
    assignment_ok: bool
    times_ok: bool
    user_error: float | None  # max |price - table| under user-optimal
    operator_error: float | None

    def passes(self, user_tol=0.01, op_tol=0.05) -> bool:
        return (self.assignment_ok and self.times_ok and self.user_error is not None
                and self.user_error <= user_tol and self.operator_error is not None
                and self.operator_error <= op_tol)


def score_three_node(result: FleetResult) -> CalibrationPoint:
    inst, a = result.instance, result.assignment
    expected = {(od_user_id(o, d), rid) for (o, d), rid in FLEET_REFERENCE["routes"].items()}
    assignment_ok = set(a.x) == expected and all(k == 1 for k in a.x.values())
    times_ok = True
    for (o, d), rid in FLEET_REFERENCE["routes"].items():
        g = inst.geometry.get((od_user_id(o, d), rid))
        if g is None or not g.compatible or g.wait_time != FLEET_REFERENCE["wait"][(o, d)] \
                or g.in_vehicle_time != FLEET_REFERENCE["ride"][(o, d)]:
            times_ok = False
    errs = {}
    for name, key in (("user", "user_prices"), ("operator", "operator_prices")):
        sched: PriceSchedule | None = result.prices.get(name)
        if sched is None or not assignment_ok:
            errs[name] = None
            continue
        errs[name] = max(abs(float(sched.price(od_user_id(o, d)) - p)) for (o, d), p in FLEET_REFERENCE[key].items())
    link = inst.network.links[(1, 3)].distance
    return CalibrationPoint(link, assignment_ok, times_ok, errs["user"], errs["operator"])


@dataclass
class CalibrationReport:
    points: list
    chosen: CalibrationPoint | None
    default_miles: Fraction
    confirmed: CalibrationPoint | None = None  # chosen point re-solved in exact arithmetic

    @property
    def satisfying(self) -> list:
        return [p for p in self.points if p.passes()]

    def summary(self) -> str:
        lines = [f"grid points: {len(self.points)}",
                 f"points matching assignment and times: {sum(p.assignment_ok and p.times_ok for p in self.points)}",
                 f"points matching every price: {len(self.satisfying)}"]
        if self.satisfying:
            lo = min(p.link_miles for p in self.satisfying)
            hi = max(p.link_miles for p in self.satisfying)
            lines.append(f"matching link lengths span {float(lo):.2f}..{float(hi):.2f} mi")
        if self.chosen is not None:
            c = self.chosen
            lines.append(f"chosen 1-3 length {float(c.link_miles):.2f} mi: user error {c.user_error:.4f}, "
                         f"operator error {c.operator_error:.4f}")
        if self.confirmed is not None:
            c = self.confirmed
            lines.append(f"exact re-solve: assignment {'ok' if c.assignment_ok else 'differs'}, "
                         f"user error {c.user_error}, operator error {c.operator_error}")
        return "\n".join(lines)


def calibrate_link_13(step=Fraction(1, 20), upper=10, default=5, b1=0, b2=0,
                      options: SolverOptions | None = None) -> CalibrationReport:
    """Scan the 1-3 link length over ``(0, upper]`` and score each point against the table.

    The scan runs in floating point by default. The chosen point is the
    passing one nearest ``default``; failing that, the closest fit by
    operator-price error among points that reproduce the assignment. The
    chosen point is then re-solved in exact arithmetic.
    """
    options = options or SolverOptions(exact=False)
    step, upper, default = frac(step), frac(upper), frac(default)
    points = []
    k = 1
    while k * step <= upper:
        inst, ops = three_node_fleet(k * step, b1, b2)
        result = solve_fleet_scenario(inst, ops, options, allocate=False)
        if score_three_node(result).assignment_ok:
            result = solve_fleet_scenario(inst, ops, options, assignment=result.assignment)
        points.append(score_three_node(result))
        k += 1
    passing = [p for p in points if p.passes()]
    if passing:
        chosen = min(passing, key=lambda p: (abs(p.link_miles - default), p.link_miles))
    else:
        fits = [p for p in points if p.assignment_ok and p.operator_error is not None]
        chosen = min(fits, key=lambda p: (p.operator_error, abs(p.link_miles - default))) if fits else None
    confirmed = None
    if chosen is not None:
        inst, ops = three_node_fleet(chosen.link_miles, b1, b2)
        confirmed = score_three_node(solve_fleet_scenario(inst, ops, SolverOptions(exact=True)))
    return CalibrationReport(points, chosen, default, confirmed)


def with_operator_benefits(instance: ProblemInstance, benefits: Mapping[str, object]) -> ProblemInstance:
    routes = [replace(r, min_operator_benefit=frac(benefits[r.operator_id])) if r.operator_id in benefits else r
              for r in instance.routes]
    return instance.with_routes(routes)
