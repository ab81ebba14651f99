"""Trip batches: pairwise pooled routes, interval bisection, metrics and policy arithmetic."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from ._num import frac
from .assignment import Assignment, SolverOptions, build_model, solve_assignment
from .core import (
    OPERATOR_OPTIMAL,
    STATUS_OPTIMAL,
    USER_OPTIMAL,
    AllocationOutcome,
    allocation_gap,
    build_stability_system,
    compute_prices,
    expand_agents,
    solve_system,
)
from .model import CostParams, CostRule, Network, Route, UserGroup, ValidationError, route_distance, validate_instance

STATUS_STABLE = "stable"
STATUS_FLOOR = "empty_core_at_floor"


@dataclass(frozen=True)
class TripRecord:
    id: str
    pickup: object
    dropoff: object
    request_time: Fraction  # seconds
    fare: Fraction  # dollars
    passengers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "request_time", frac(self.request_time))
        object.__setattr__(self, "fare", frac(self.fare))
        if self.pickup == self.dropoff:
            raise ValidationError(f"trip {self.id} has pickup equal to dropoff")
        if self.fare < 0:
            raise ValidationError(f"trip {self.id} has a negative fare")
        if isinstance(self.passengers, bool) or not isinstance(self.passengers, int) or self.passengers < 1:
            raise ValidationError(f"trip {self.id} needs a positive passenger count")


@dataclass(frozen=True)
class PipelineParams:
    cost: CostParams = field(default_factory=CostParams)
    interval_s: Fraction = Fraction(60)
    floor_s: Fraction = Fraction(1)
    capacity: int = 3
    exact: bool = True
    tol: float = 1e-7

    def __post_init__(self):
        object.__setattr__(self, "interval_s", frac(self.interval_s))
        object.__setattr__(self, "floor_s", frac(self.floor_s))
        if not self.interval_s > self.floor_s > 0:
            raise ValidationError("need interval width > floor > 0")
        if self.capacity < 1:
            raise ValidationError("capacity must be positive")


def single_route_id(trip_id: str) -> str:
    return f"S:{trip_id}"


def shared_route_id(f: str, g: str) -> str:
    return f"P:{f}+{g}"


def _path_time(seq, network: Network) -> Fraction:
    return sum((network.leg(a, b).travel_time for a, b in zip(seq[:-1], seq[1:])), Fraction(0))


def generate_candidate_routes(trips: Sequence[TripRecord], network: Network, params: PipelineParams | None = None) -> list:
    """One direct route per trip plus the quickest pooled ordering per unordered trip pair.

    The four pooled orderings are tried in the order O_f O_g D_f D_g,
    O_f O_g D_g D_f, O_g O_f D_f D_g, O_g O_f D_g D_f; the first of equally
    quick ones wins. Routes may repeat nodes (coincident stops become
    zero-length legs) and are costed per mile by the cost rule passed to
    :func:`trip_instance`.
    """
    params = params or PipelineParams()
    for t in trips:
        for n in (t.pickup, t.dropoff):
            if n not in network.nodes:
                raise ValidationError(f"trip {t.id}: node {n!r} missing from the matrices")
    w = params.capacity
    routes = [Route(single_route_id(t.id), (t.pickup, t.dropoff), w, strict=False) for t in trips]
    for i, f in enumerate(trips):
        for g in trips[i + 1:]:
            options = [
                (f.pickup, g.pickup, f.dropoff, g.dropoff),
                (f.pickup, g.pickup, g.dropoff, f.dropoff),
                (g.pickup, f.pickup, f.dropoff, g.dropoff),
                (g.pickup, f.pickup, g.dropoff, f.dropoff),
            ]
            best = min(range(4), key=lambda k: (_path_time(options[k], network), k))
            routes.append(Route(shared_route_id(f.id, g.id), options[best], w, strict=False))
    return routes


def trip_users(trips: Sequence[TripRecord], network: Network, params: CostParams) -> list:
    """Utility = observed fare + value of the direct ride time, so riding alone at the fare nets zero."""
    return [UserGroup(t.id, t.pickup, t.dropoff, t.passengers,
                      t.fare + params.tvot * network.leg(t.pickup, t.dropoff).travel_time,
                      observed_fare=t.fare, request_time=float(t.request_time))
            for t in trips]


def trip_instance(trips: Sequence[TripRecord], network: Network, params: PipelineParams | None = None):
    params = params or PipelineParams()
    routes = generate_candidate_routes(trips, network, params)
    users = trip_users(trips, network, params.cost)
    return validate_instance(network, routes, users, params.cost, CostRule.per_mile(params.cost.op_cost_per_mile))


def model_size(n: int) -> tuple:
    """(demand rows, capacity rows, big-M rows) of the model built from ``n`` trips."""
    return n, n * (3 * n - 1) // 2, n * (n + 1) // 2


@dataclass
class IntervalResult:
    start: Fraction
    end: Fraction
    trip_ids: tuple
    status: str
    instance: object = None
    assignment: Assignment | None = None
    outcomes: dict = field(default_factory=dict)
    prices: dict = field(default_factory=dict)
    solve_time: float = 0.0
    depth: int = 0

    @property
    def width(self) -> Fraction:
        return self.end - self.start


def _solve_interval(trips, network, params, start, end, depth) -> IntervalResult:
    t0 = time.perf_counter()
    inst = trip_instance(trips, network, params)
    a = solve_assignment(inst, SolverOptions(exact=params.exact, tol=params.tol))
    system = build_stability_system(inst, a)
    res = IntervalResult(start, end, tuple(t.id for t in trips), STATUS_STABLE, inst, a, depth=depth)
    for name, obj in (("user", USER_OPTIMAL), ("operator", OPERATOR_OPTIMAL)):
        out: AllocationOutcome = solve_system(inst, system, obj, exact=params.exact, tol=params.tol)
        res.outcomes[name] = out
        if out.status != STATUS_OPTIMAL:
            res.status = STATUS_FLOOR
            break
        res.prices[name] = compute_prices(inst, a, out)
    res.solve_time = time.perf_counter() - t0
    return res


def partition_and_stabilize(trips: Sequence[TripRecord], network: Network, params: PipelineParams | None = None,
                            origin: Fraction | None = None) -> list:
    """Solve fixed-width request-time windows, halving any window whose core is empty.

    Each trip belongs to the window containing its request time. Halving
    stops once the width reaches the floor or the window holds one trip; such
    windows are reported as ``empty_core_at_floor``. Windows without trips
    are skipped.
    """
    params = params or PipelineParams()
    trips = sorted(trips, key=lambda t: (t.request_time, t.id))
    if not trips:
        return []
    origin = frac(origin) if origin is not None else trips[0].request_time
    out = []

    def visit(batch, start, end, depth):
        if not batch:
            return
        res = _solve_interval(batch, network, params, start, end, depth)
        if res.status == STATUS_STABLE or end - start <= params.floor_s or len(batch) == 1:
            out.append(res)
            return
        mid = start + (end - start) / 2
        visit([t for t in batch if t.request_time < mid], start, mid, depth + 1)
        visit([t for t in batch if t.request_time >= mid], mid, end, depth + 1)

    width = params.interval_s
    k_last = int((trips[-1].request_time - origin) // width)
    by_window: dict = {}
    for t in trips:
        by_window.setdefault(int((t.request_time - origin) // width), []).append(t)
    for k in range(k_last + 1):
        visit(by_window.get(k, []), origin + k * width, origin + (k + 1) * width, 0)
    return out


@dataclass
class PipelineReport:
    intervals: list
    metrics: dict  # deterministic summary
    price_rows: list  # (trip id, agent id, route id, observed fare per rider, user-opt price, operator-opt price)
    gaps: list  # (agent id, gap), largest first
    timing: dict  # wall-clock only; excluded from deterministic output


def mean_widths(intervals: Sequence[IntervalResult], passengers: Mapping[str, int]) -> tuple:
    """(demand-weighted, interval-count-weighted) mean width in seconds."""
    if not intervals:
        return None, None
    total = sum(passengers[t] for r in intervals for t in r.trip_ids)
    demand = sum((r.width * sum(passengers[t] for t in r.trip_ids) for r in intervals), Fraction(0)) / total
    count = sum((r.width for r in intervals), Fraction(0)) / len(intervals)
    return demand, count


def run_pipeline(trips: Sequence[TripRecord], network: Network, params: PipelineParams | None = None) -> PipelineReport:
    params = params or PipelineParams()
    t0 = time.perf_counter()
    trips = sorted(trips, key=lambda t: (t.request_time, t.id))
    by_id = {t.id: t for t in trips}
    if len(by_id) != len(trips):
        raise ValidationError("duplicate trip ids")
    intervals = partition_and_stabilize(trips, network, params)
    zero = Fraction(0)
    direct = {t.id: network.leg(t.pickup, t.dropoff).distance for t in trips}
    vmt_single = sum(direct.values(), zero)
    vmt_shared = zero
    shared_trips, matched_trips = set(), set()
    price_rows, gaps = [], []
    for res in intervals:
        if res.status != STATUS_STABLE:
            vmt_shared += sum((direct[t] for t in res.trip_ids), zero)
            continue
        inst, a = res.instance, res.assignment
        for rid in a.used_routes:
            vmt_shared += route_distance(inst.route(rid), network)
            riders = a.riders(rid)
            matched_trips.update(riders)
            if len(riders) >= 2:
                shared_trips.update(riders)
        served = {s for (s, _) in a.x}
        vmt_shared += sum((direct[t] for t in res.trip_ids if t not in served), zero)
        up, op = res.prices["user"], res.prices["operator"]
        for ag in expand_agents(inst, a):
            if ag.route is None:
                continue
            trip = by_id[ag.group]
            price_rows.append((trip.id, ag.id, ag.route, trip.fare / trip.passengers,
                               up.price(ag.id), op.price(ag.id)))
        gaps.extend(allocation_gap(up, op))
    gaps.sort(key=lambda item: (-item[1], item[0]))
    passengers = {t.id: t.passengers for t in trips}
    demand_w, count_w = mean_widths(intervals, passengers)
    n = len(trips)
    metrics = {
        "trips": n,
        "passengers": sum(passengers.values()),
        "intervals": len(intervals),
        "stable_intervals": sum(r.status == STATUS_STABLE for r in intervals),
        "empty_core_at_floor": sum(r.status == STATUS_FLOOR for r in intervals),
        "matched_trips": len(matched_trips),
        "shared_trips": len(shared_trips),
        "share_rate": Fraction(len(shared_trips), n) if n else zero,
        "vmt_single": vmt_single,
        "vmt_shared": vmt_shared,
        "vmt_reduction": (vmt_single - vmt_shared) / vmt_single if vmt_single else zero,
        "mean_width_demand_weighted": demand_w,
        "mean_width_count_weighted": count_w,
        "mean_gap": (sum((g for _, g in gaps), zero) / len(gaps)) if gaps else zero,
    }
    timing = {
        "total_s": time.perf_counter() - t0,
        "interval_s": [r.solve_time for r in intervals],
    }
    return PipelineReport(intervals, metrics, price_rows, gaps, timing)


def walking_cost(blocks, params: CostParams | None = None, blocks_per_mile=20, walk_speed_fps=4) -> Fraction:
    """Dollar cost of walking ``blocks`` city blocks."""
    params = params or CostParams()
    blocks = frac(blocks)
    if blocks < 0:
        raise ValidationError("walking distance must be non-negative")
    feet = blocks / frac(blocks_per_mile) * 5280
    minutes = feet / frac(walk_speed_fps) / 60
    return minutes * params.tvot * params.walk_multiplier


def walking_transfer(c_d, absorbable: int, total: int, mean_residual_gap) -> Fraction:
    """Per-traveler subsidy needed when only ``absorbable`` travelers' gaps cover ``c_d``."""
    if total <= 0:
        return Fraction(0)
    rest = total - absorbable
    return (frac(c_d) - frac(mean_residual_gap)) * Fraction(rest, total)


@dataclass(frozen=True)
class WalkingPolicy:
    blocks: Fraction
    cost: Fraction
    absorbable: int
    total: int
    mean_residual_gap: Fraction
    transfer: Fraction


def evaluate_walking_policy(gaps: Sequence, blocks, params: CostParams | None = None,
                            blocks_per_mile=20, walk_speed_fps=4) -> WalkingPolicy:
    """Can the gap between operator- and user-optimal prices pay for a walk of ``blocks``?

    ``gaps`` is the output of :func:`allocation_gap` (pairs) or bare numbers.
    """
    values = [frac(g[1] if isinstance(g, tuple) else g) for g in gaps]
    c_d = walking_cost(blocks, params, blocks_per_mile, walk_speed_fps)
    absorbable = sum(1 for g in values if g >= c_d)
    rest = [g for g in values if g < c_d]
    mean_rest = sum(rest, Fraction(0)) / len(rest) if rest else Fraction(0)
    transfer = walking_transfer(c_d, absorbable, len(values), mean_rest) if rest else Fraction(0)
    return WalkingPolicy(frac(blocks), c_d, absorbable, len(values), mean_rest, transfer)


def pipeline_model(n: int, seed: int = 0, params: PipelineParams | None = None):
    """Instance and assignment model for ``n`` synthetic trips in a single interval."""
    from .synthetic import euclidean_requests

    trips, nodes, minutes, miles = euclidean_requests(seed, n)
    net = Network.from_matrices(nodes, minutes, miles)
    inst = trip_instance(trips, net, params)
    return inst, build_model(inst)
