"""Network, route and traveler data model plus the payoff geometry.

Routes carry explicit node sequences; which links a traveler occupies on a
route is always derived from the sequence, never supplied.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Mapping, Sequence

from ._num import Number, frac

Node = Hashable

DEFAULT_INCOMPATIBLE_COST = Fraction(10**6)


class ValidationError(ValueError):
    """Raised when an instance violates a structural invariant."""


@dataclass(frozen=True)
class Link:
    tail: Node
    head: Node
    travel_time: Fraction  # minutes
    distance: Fraction  # miles


@dataclass(frozen=True)
class Network:
    nodes: frozenset
    links: Mapping[tuple, Link]

    @classmethod
    def build(cls, nodes, links) -> "Network":
        """Build from ``nodes`` and ``(tail, head, minutes, miles)`` tuples."""
        node_set = frozenset(nodes)
        table: dict[tuple, Link] = {}
        for tail, head, minutes, miles in links:
            if tail not in node_set or head not in node_set:
                raise ValidationError(f"link {tail}->{head} references an undeclared node")
            if (tail, head) in table:
                raise ValidationError(f"duplicate link {tail}->{head}")
            t, d = frac(minutes), frac(miles)
            if t < 0 or d < 0:
                raise ValidationError(f"link {tail}->{head} has a negative time or distance")
            table[(tail, head)] = Link(tail, head, t, d)
        return cls(node_set, table)

    @classmethod
    def from_matrices(cls, nodes, minutes, miles) -> "Network":
        """Complete digraph from square time/distance lookups keyed ``[i][j]``."""
        links = []
        for i in nodes:
            for j in nodes:
                if i != j:
                    links.append((i, j, minutes[i][j], miles[i][j]))
        return cls.build(nodes, links)

    def leg(self, tail: Node, head: Node) -> Link:
        if tail == head:
            return Link(tail, head, Fraction(0), Fraction(0))
        try:
            return self.links[(tail, head)]
        except KeyError:
            raise ValidationError(f"no link {tail}->{head}") from None


@dataclass(frozen=True)
class Route:
    """An operator route (or vehicle path).

    ``strict`` routes must visit distinct nodes, except that the last node may
    close a cycle back to the first. Generated pooling routes are built with
    ``strict=False`` so that coincident pickups/dropoffs become zero-length
    legs.
    """

    id: str
    nodes: tuple
    capacity: int
    cost: Fraction | None = None
    operator_id: str | None = None
    vehicle_id: str | None = None
    dispatch_node: Node | None = None
    min_operator_benefit: Fraction | None = None
    strict: bool = True

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if self.cost is not None:
            object.__setattr__(self, "cost", frac(self.cost))
        if self.min_operator_benefit is not None:
            object.__setattr__(self, "min_operator_benefit", frac(self.min_operator_benefit))

    @property
    def legs(self) -> tuple:
        """Consecutive node pairs; position ``i`` is the leg ``nodes[i] -> nodes[i+1]``."""
        return tuple(zip(self.nodes[:-1], self.nodes[1:]))

    @property
    def link_set(self) -> frozenset:
        return frozenset(self.legs)


@dataclass(frozen=True)
class UserGroup:
    id: str
    origin: Node
    destination: Node
    demand: int = 1
    utility: Fraction | Mapping[str, Fraction] = Fraction(0)
    min_benefit: Fraction = Fraction(0)
    observed_fare: Fraction | None = None
    request_time: float | None = None

    def __post_init__(self):
        if isinstance(self.utility, Mapping):
            object.__setattr__(self, "utility", {k: frac(v) for k, v in self.utility.items()})
        else:
            object.__setattr__(self, "utility", frac(self.utility))
        object.__setattr__(self, "min_benefit", frac(self.min_benefit))
        if self.observed_fare is not None:
            object.__setattr__(self, "observed_fare", frac(self.observed_fare))

    def utility_for(self, route_id: str) -> Fraction:
        if isinstance(self.utility, Mapping):
            return self.utility.get(route_id, Fraction(0))
        return self.utility


@dataclass(frozen=True)
class CostParams:
    tvot: Fraction = Fraction("0.4")
    wait_multiplier: Fraction = Fraction(2)
    walk_multiplier: Fraction = Fraction(1)
    op_cost_per_mile: Fraction = Fraction("0.9")
    min_operator_benefit: Fraction = Fraction(0)
    incompatible_cost: Fraction = DEFAULT_INCOMPATIBLE_COST

    def __post_init__(self):
        for name in ("tvot", "wait_multiplier", "walk_multiplier", "op_cost_per_mile",
                     "min_operator_benefit", "incompatible_cost"):
            object.__setattr__(self, name, frac(getattr(self, name)))
        for name in ("tvot", "wait_multiplier", "walk_multiplier", "op_cost_per_mile"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")


@dataclass(frozen=True)
class CostRule:
    """Route operating-cost rule: ``per-link-affine``, ``per-mile`` or ``explicit``."""

    kind: str = "explicit"
    alpha: Fraction = Fraction(0)
    beta: Fraction = Fraction(0)
    rate: Fraction = Fraction(0)

    KINDS = ("per-link-affine", "per-mile", "explicit")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValidationError(f"unknown cost rule {self.kind!r}")
        for name in ("alpha", "beta", "rate"):
            object.__setattr__(self, name, frac(getattr(self, name)))

    @classmethod
    def per_link_affine(cls, alpha: Number, beta: Number) -> "CostRule":
        return cls("per-link-affine", alpha=frac(alpha), beta=frac(beta))

    @classmethod
    def per_mile(cls, rate: Number) -> "CostRule":
        return cls("per-mile", rate=frac(rate))


@dataclass(frozen=True)
class MatchGeometry:
    compatible: bool
    board_index: int | None = None
    alight_index: int | None = None
    used_links: tuple = ()
    leg_indices: tuple = ()
    in_vehicle_time: Fraction = Fraction(0)
    wait_time: Fraction = Fraction(0)


INCOMPATIBLE = MatchGeometry(False)


def match_geometry(user: UserGroup, route: Route, network: Network | None = None) -> MatchGeometry:
    """Where ``user`` boards and alights on ``route`` and which legs it occupies.

    When the origin or destination occurs more than once (cycles, generated
    routes with coincident stops) the shortest boarding-to-alighting span is
    used, earliest boarding first on ties.
    """
    seq = route.nodes
    best = None
    for i, n in enumerate(seq):
        if n != user.origin:
            continue
        for j in range(i + 1, len(seq)):
            if seq[j] == user.destination:
                if best is None or j - i < best[1] - best[0]:
                    best = (i, j)
                break
    if best is None:
        return INCOMPATIBLE
    i, j = best
    legs = route.legs[i:j]
    ride = wait = Fraction(0)
    if network is not None:
        ride = sum((network.leg(a, b).travel_time for a, b in legs), Fraction(0))
        if route.dispatch_node is not None:
            wait = network.leg(route.dispatch_node, seq[0]).travel_time
            wait += sum((network.leg(a, b).travel_time for a, b in route.legs[:i]), Fraction(0))
    return MatchGeometry(True, i, j, tuple(legs), tuple(range(i, j)), ride, wait)


def travel_cost(user: UserGroup, route: Route, params: CostParams,
                network: Network | None = None, geometry: MatchGeometry | None = None) -> Fraction:
    """Generalized travel cost in dollars; incompatible pairs get ``incompatible_cost``."""
    g = geometry if geometry is not None else match_geometry(user, route, network)
    if not g.compatible:
        return params.incompatible_cost
    return params.tvot * g.in_vehicle_time + params.tvot * params.wait_multiplier * g.wait_time


def route_distance(route: Route, network: Network) -> Fraction:
    return sum((network.leg(a, b).distance for a, b in route.legs), Fraction(0))


def route_time(route: Route, network: Network) -> Fraction:
    return sum((network.leg(a, b).travel_time for a, b in route.legs), Fraction(0))


def route_operating_cost(route: Route, rule: CostRule | str, network: Network | None = None) -> Fraction:
    if isinstance(rule, str):
        rule = CostRule(rule)
    if rule.kind == "per-link-affine":
        return rule.alpha + rule.beta * len(route.legs)
    if rule.kind == "per-mile":
        if network is None:
            raise ValidationError("per-mile cost rule needs the network")
        return rule.rate * route_distance(route, network)
    if route.cost is None:
        raise ValidationError(f"route {route.id} has no explicit cost")
    return route.cost


@dataclass(frozen=True)
class PayoffMatrix:
    a: Mapping[tuple, Fraction]  # (user id, route id) -> dollars
    dummy: Mapping[str, Fraction]  # route id -> C_r

    def __getitem__(self, key: tuple) -> Fraction:
        return self.a.get(key, Fraction(0))


@dataclass(frozen=True)
class ProblemInstance:
    """Validated, immutable instance with derived geometry and payoff caches."""

    network: Network
    routes: tuple
    users: tuple
    params: CostParams
    cost_rule: CostRule
    route_cost: Mapping[str, Fraction] = field(repr=False)
    geometry: Mapping[tuple, MatchGeometry] = field(repr=False)
    t: Mapping[tuple, Fraction] = field(repr=False)
    payoff: PayoffMatrix = field(repr=False)

    @property
    def route_index(self) -> dict:
        return {r.id: r for r in self.routes}

    @property
    def user_index(self) -> dict:
        return {u.id: u for u in self.users}

    def route(self, rid: str) -> Route:
        for r in self.routes:
            if r.id == rid:
                return r
        raise KeyError(rid)

    def user(self, sid: str) -> UserGroup:
        for u in self.users:
            if u.id == sid:
                return u
        raise KeyError(sid)

    def operator_benefit(self, route: Route) -> Fraction:
        if route.min_operator_benefit is not None:
            return route.min_operator_benefit
        return self.params.min_operator_benefit

    def net_value(self, user: UserGroup, route: Route) -> Fraction:
        """``U - t - g - b`` before clamping at zero."""
        return (user.utility_for(route.id) - self.t[(user.id, route.id)]
                - user.min_benefit - self.operator_benefit(route))

    def with_users(self, users: Sequence[UserGroup]) -> "ProblemInstance":
        return validate_instance(self.network, self.routes, users, self.params, self.cost_rule)

    def with_routes(self, routes: Sequence[Route]) -> "ProblemInstance":
        return validate_instance(self.network, routes, self.users, self.params, self.cost_rule)


def payoff_matrix(instance: ProblemInstance) -> PayoffMatrix:
    a = {}
    for r in instance.routes:
        for s in instance.users:
            if instance.geometry[(s.id, r.id)].compatible:
                a[(s.id, r.id)] = max(Fraction(0), instance.net_value(s, r))
            else:
                a[(s.id, r.id)] = Fraction(0)
    return PayoffMatrix(a, {r.id: instance.route_cost[r.id] for r in instance.routes})


def _check_route(route: Route, network: Network) -> None:
    if len(route.nodes) < 2:
        raise ValidationError(f"route {route.id} needs at least two nodes")
    if isinstance(route.capacity, bool) or not isinstance(route.capacity, int) or route.capacity <= 0:
        raise ValidationError(f"route {route.id} capacity must be a positive integer")
    for n in route.nodes:
        if n not in network.nodes:
            raise ValidationError(f"route {route.id} references unknown node {n!r}")
    if route.dispatch_node is not None and route.dispatch_node not in network.nodes:
        raise ValidationError(f"route {route.id} dispatch node {route.dispatch_node!r} unknown")
    for a, b in route.legs:
        if a == b:
            if route.strict:
                raise ValidationError(f"route {route.id} repeats node {a!r}")
            continue
        if (a, b) not in network.links:
            raise ValidationError(f"route {route.id}: {a}->{b} is not a network link")
    if route.strict:
        body = route.nodes[:-1] if route.nodes[-1] == route.nodes[0] else route.nodes
        if len(set(body)) != len(body) or (route.nodes[-1] == route.nodes[0] and len(route.nodes) < 3):
            raise ValidationError(f"route {route.id} revisits a node")


def validate_instance(network: Network, routes: Sequence[Route], users: Sequence[UserGroup],
                      params: CostParams | None = None,
                      cost_rule: CostRule | None = None) -> ProblemInstance:
    """Check every invariant and build the geometry/cost/payoff caches."""
    params = params or CostParams()
    cost_rule = cost_rule or CostRule("explicit")
    routes = tuple(routes)
    users = tuple(users)
    seen = set()
    for r in routes:
        if r.id in seen:
            raise ValidationError(f"duplicate route id {r.id}")
        seen.add(r.id)
        _check_route(r, network)
    seen = set()
    for s in users:
        if s.id in seen:
            raise ValidationError(f"duplicate user id {s.id}")
        seen.add(s.id)
        if s.origin not in network.nodes or s.destination not in network.nodes:
            raise ValidationError(f"user {s.id} references an unknown node")
        if s.origin == s.destination:
            raise ValidationError(f"user {s.id} has origin equal to destination")
        if isinstance(s.demand, bool) or not isinstance(s.demand, int) or s.demand < 1:
            raise ValidationError(f"user {s.id} demand must be a positive integer")
        if s.min_benefit < 0:
            raise ValidationError(f"user {s.id} min_benefit must be non-negative")

    route_cost = {}
    for r in routes:
        c = r.cost if r.cost is not None else route_operating_cost(r, cost_rule, network)
        if c < 0:
            raise ValidationError(f"route {r.id} has negative operating cost")
        route_cost[r.id] = c

    geometry, t = {}, {}
    for s in users:
        for r in routes:
            g = match_geometry(s, r, network)
            geometry[(s.id, r.id)] = g
            t[(s.id, r.id)] = travel_cost(s, r, params, geometry=g)

    max_u = max((s.utility_for(r.id) for s in users for r in routes), default=Fraction(0))
    if params.incompatible_cost <= max_u:
        raise ValidationError("incompatible_cost must exceed every utility")

    inst = ProblemInstance(network, routes, users, params, cost_rule, route_cost, geometry, t,
                           PayoffMatrix({}, {}))
    object.__setattr__(inst, "payoff", payoff_matrix(inst))
    return inst
