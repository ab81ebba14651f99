"""Seeded random instances for tests, benchmarks and the CLI ``--seed`` flag."""

from __future__ import annotations

import itertools
import math
import random
from fractions import Fraction

from .model import CostParams, CostRule, Network, Route, UserGroup, validate_instance


def small_network(rng: random.Random, n_nodes: int = 5) -> Network:
    nodes = list(range(1, n_nodes + 1))
    links = []
    for i, j in itertools.permutations(nodes, 2):
        minutes = Fraction(rng.randint(1, 8))
        links.append((i, j, minutes, minutes / 2))
    return Network.build(nodes, links)


def random_instance(seed: int, max_agents: int = 6, max_routes: int = 8, n_nodes: int = 5,
                    max_demand: int = 2):
    """Random capacitated instance with at most ``max_agents`` unit agents.

    Users are drawn from node pairs that some route serves in order, so most
    users have at least one compatible route.
    """
    rng = random.Random(seed)
    net = small_network(rng, n_nodes)
    nodes = sorted(net.nodes)
    routes = []
    for k in range(rng.randint(1, max_routes)):
        length = rng.randint(2, min(4, n_nodes))
        seq = rng.sample(nodes, length)
        routes.append(Route(f"r{k:02d}", tuple(seq), capacity=rng.randint(1, 3),
                            cost=Fraction(rng.randint(2, 12), 2)))
    users = []
    budget = rng.randint(1, max_agents)
    k = 0
    while budget > 0:
        q = min(budget, rng.randint(1, max_demand))
        r = rng.choice(routes)
        i, j = sorted(rng.sample(range(len(r.nodes)), 2))
        users.append(UserGroup(f"s{k:02d}", r.nodes[i], r.nodes[j], demand=q,
                               utility=Fraction(rng.randint(4, 24), 2)))
        budget -= q
        k += 1
    params = CostParams(tvot=Fraction(1, 2), wait_multiplier=1)
    return validate_instance(net, routes, users, params, CostRule("explicit"))


def euclidean_trips(seed: int, n: int, width: float = 2.0, height: float = 2.0,
                    horizon_s: float = 600.0, speed_mph: int = 12,
                    fare_base: str = "2.5", fare_per_mile: str = "2.5", n_zones: int | None = None):
    """Random trips in a rectangle with matching time/distance matrices.

    Points sit on a 0.01-mile grid and distances are Manhattan, so both
    matrices are exact and satisfy the triangle inequality; minutes are miles
    at ``speed_mph``. Each trip gets its own pickup and dropoff node unless
    ``n_zones`` is given, in which case endpoints are drawn from that many
    shared zones. Returns ``(trips, nodes, minutes, miles)``.
    """
    from .pipeline import TripRecord

    rng = random.Random(seed)
    gx, gy = int(round(width * 100)), int(round(height * 100))

    def point():
        return rng.randint(0, gx), rng.randint(0, gy)

    points = {}
    if n_zones:
        for z in range(n_zones):
            points[f"z{z:02d}"] = point()
    trips = []
    for k in range(n):
        if n_zones:
            o, d = rng.sample(sorted(points), 2)
        else:
            o, d = f"o{k:03d}", f"d{k:03d}"
            points[o] = point()
            points[d] = point()
            while points[d] == points[o]:
                points[d] = point()
        t = Fraction(rng.randint(0, int(horizon_s * 10)), 10)
        trips.append((f"t{k:03d}", o, d, t))
    nodes = sorted(points)
    per_mile = Fraction(60, speed_mph)
    miles, minutes = {}, {}
    for a in nodes:
        miles[a], minutes[a] = {}, {}
        for b in nodes:
            (x1, y1), (x2, y2) = points[a], points[b]
            dist = Fraction(abs(x1 - x2) + abs(y1 - y2), 100)
            miles[a][b] = dist
            minutes[a][b] = dist * per_mile
    base, rate = Fraction(fare_base), Fraction(fare_per_mile)
    records = []
    for tid, o, d, t in trips:
        fare = base + rate * miles[o][d]
        records.append(TripRecord(tid, o, d, t, Fraction(round(fare * 100), 100), 1))
    records.sort(key=lambda r: (r.request_time, r.id))
    return records, nodes, minutes, miles


def euclidean_requests(seed: int, n: int, side: float = 3.0):
    """``n`` single-rider trips for the model-size benchmark (all in one interval)."""
    trips, nodes, minutes, miles = euclidean_trips(seed, n, width=side, height=side, horizon_s=1.0)
    return trips, nodes, minutes, miles


def log_spaced(lo: int, hi: int) -> list:
    return sorted({int(round(math.exp(x))) for x in
                   [math.log(lo) + i * (math.log(hi) - math.log(lo)) / 8 for i in range(9)]})
