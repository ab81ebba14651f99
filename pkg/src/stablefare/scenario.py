"""Scenario documents (JSON) and the trip/matrix CSV readers.

Every number in a scenario is written as a string: terminating decimals as
plain decimals, anything else as ``"p/q"``, so a parse/emit/parse cycle is
lossless.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

from ._num import frac
from .model import CostParams, CostRule, Network, Route, UserGroup, ValidationError, validate_instance
from .pipeline import PipelineParams, TripRecord
from .variants import Operator, Vehicle, fleet_routes

FORMAT = "stablefare-scenario/1"


class ScenarioError(ValueError):
    """Malformed scenario or input file."""


def exact_str(value) -> str:
    """Lossless text form of a number."""
    f = frac(value)
    d = f.denominator
    for p in (2, 5):
        while d % p == 0:
            d //= p
    if d != 1:
        return f"{f.numerator}/{f.denominator}"
    k = 0
    while (f * 10**k).denominator != 1:
        k += 1
    s = f"{abs(f.numerator) * 10**k // f.denominator:0{k + 1}d}"
    body = s if k == 0 else f"{s[:-k]}.{s[-k:]}"
    return ("-" if f < 0 else "") + body


def parse_number(value, what: str) -> Fraction:
    try:
        return frac(value)
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise ScenarioError(f"{what}: not a number ({value!r})") from exc


@dataclass(frozen=True)
class Scenario:
    network: Network
    users: tuple
    routes: tuple
    params: CostParams = field(default_factory=CostParams)
    cost_rule: CostRule = field(default_factory=CostRule)
    operators: tuple = ()
    name: str = ""

    def instance(self):
        return validate_instance(self.network, self.routes, self.users, self.params, self.cost_rule)

    @property
    def has_fleet(self) -> bool:
        return any(op.vehicles for op in self.operators)

    @property
    def ownership(self) -> dict | None:
        if not self.operators:
            return None
        owner = {}
        for op in self.operators:
            for rid in op.routes:
                owner[rid] = op.id
        for r in self.routes:
            if r.operator_id is not None:
                owner.setdefault(r.id, r.operator_id)
        return owner


def _node(value):
    if isinstance(value, (int, str)) and not isinstance(value, bool):
        return value
    raise ScenarioError(f"node ids must be integers or strings, got {value!r}")


def _get(obj: dict, key: str, what: str, default=...):
    if key in obj:
        return obj[key]
    if default is ...:
        raise ScenarioError(f"{what}: missing field {key!r}")
    return default


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    fmt = doc.get("format", FORMAT)
    if fmt != FORMAT:
        raise ScenarioError(f"unsupported format {fmt!r}")
    net_doc = _get(doc, "network", "scenario")
    nodes = [_node(n) for n in _get(net_doc, "nodes", "network")]
    links = []
    for i, link in enumerate(_get(net_doc, "links", "network")):
        what = f"link {i}"
        links.append((_node(_get(link, "tail", what)), _node(_get(link, "head", what)),
                      parse_number(_get(link, "minutes", what), what), parse_number(_get(link, "miles", what), what)))
    try:
        network = Network.build(nodes, links)
    except ValidationError as exc:
        raise ScenarioError(str(exc)) from exc

    p = doc.get("params", {})
    defaults = CostParams()
    params = CostParams(**{k: parse_number(p.get(k, getattr(defaults, k)), f"params.{k}")
                           for k in ("tvot", "wait_multiplier", "walk_multiplier", "op_cost_per_mile",
                                     "min_operator_benefit", "incompatible_cost")})
    unknown = set(p) - {"tvot", "wait_multiplier", "walk_multiplier", "op_cost_per_mile",
                        "min_operator_benefit", "incompatible_cost"}
    if unknown:
        raise ScenarioError(f"unknown params: {', '.join(sorted(unknown))}")

    rule_doc = doc.get("cost_rule", {"kind": "explicit"})
    kind = rule_doc.get("kind", "explicit")
    if kind not in CostRule.KINDS:
        raise ScenarioError(f"unknown cost rule {kind!r}")
    rule = CostRule(kind, **{k: parse_number(rule_doc[k], f"cost_rule.{k}")
                             for k in ("alpha", "beta", "rate") if k in rule_doc})

    operators = []
    for op in doc.get("operators", []):
        what = f"operator {op.get('id')!r}"
        vehicles = tuple(
            Vehicle(str(_get(v, "id", what)), _node(_get(v, "initial_node", what)),
                    tuple(tuple(_node(n) for n in path) for path in _get(v, "paths", what)),
                    int(v.get("w_r", 2)))
            for v in op.get("vehicles", []))
        operators.append(Operator(str(_get(op, "id", "operator")), tuple(str(r) for r in op.get("routes", [])),
                                  vehicles, parse_number(op.get("min_benefit", "0"), what)))

    if "routes" in doc:
        routes = []
        for r in doc["routes"]:
            what = f"route {r.get('id')!r}"
            cap = _get(r, "w_r", what)
            if isinstance(cap, bool) or not isinstance(cap, int):
                raise ScenarioError(f"{what}: w_r must be an integer")
            routes.append(Route(
                str(_get(r, "id", "route")), tuple(_node(n) for n in _get(r, "nodes", what)), cap,
                cost=parse_number(r["C_r"], what) if "C_r" in r else None,
                operator_id=r.get("operator"), vehicle_id=r.get("vehicle"),
                dispatch_node=_node(r["dispatch_node"]) if r.get("dispatch_node") is not None else None,
                min_operator_benefit=parse_number(r["b_r"], what) if "b_r" in r else None,
                strict=bool(r.get("strict", True))))
    elif any(op.vehicles for op in operators):
        routes = fleet_routes(operators)
    else:
        raise ScenarioError("scenario has neither routes nor vehicle paths")

    users = []
    for u in _get(doc, "users", "scenario"):
        what = f"user {u.get('id')!r}"
        q = u.get("q_s", 1)
        if isinstance(q, bool) or not isinstance(q, int):
            raise ScenarioError(f"{what}: q_s must be an integer")
        util = _get(u, "U", what)
        if isinstance(util, dict):
            util = {str(k): parse_number(v, what) for k, v in util.items()}
        else:
            util = parse_number(util, what)
        users.append(UserGroup(
            str(_get(u, "id", "user")), _node(_get(u, "origin", what)), _node(_get(u, "destination", what)), q, util,
            min_benefit=parse_number(u.get("g", "0"), what),
            observed_fare=parse_number(u["observed_fare"], what) if u.get("observed_fare") is not None else None,
            request_time=float(u["request_time"]) if u.get("request_time") is not None else None))
    return Scenario(network, tuple(users), tuple(routes), params, rule, tuple(operators), str(doc.get("name", "")))


def scenario_to_dict(sc: Scenario) -> dict:
    net = sc.network
    links = [{"tail": l.tail, "head": l.head, "minutes": exact_str(l.travel_time), "miles": exact_str(l.distance)}
             for l in sorted(net.links.values(), key=lambda l: (str(l.tail), str(l.head)))]
    doc: dict = {"format": FORMAT}
    if sc.name:
        doc["name"] = sc.name
    doc["network"] = {"nodes": sorted(net.nodes, key=str), "links": links}
    p = sc.params
    doc["params"] = {k: exact_str(getattr(p, k)) for k in ("tvot", "wait_multiplier", "walk_multiplier",
                                                           "op_cost_per_mile", "min_operator_benefit",
                                                           "incompatible_cost")}
    rule = {"kind": sc.cost_rule.kind}
    if sc.cost_rule.kind == "per-link-affine":
        rule.update(alpha=exact_str(sc.cost_rule.alpha), beta=exact_str(sc.cost_rule.beta))
    elif sc.cost_rule.kind == "per-mile":
        rule["rate"] = exact_str(sc.cost_rule.rate)
    doc["cost_rule"] = rule
    if sc.operators:
        ops = []
        for op in sc.operators:
            entry: dict = {"id": op.id, "min_benefit": exact_str(op.min_benefit)}
            if op.routes:
                entry["routes"] = list(op.routes)
            if op.vehicles:
                entry["vehicles"] = [{"id": v.id, "initial_node": v.initial_node, "w_r": v.capacity,
                                      "paths": [list(path) for path in v.paths]} for v in op.vehicles]
            ops.append(entry)
        doc["operators"] = ops
    routes = []
    for r in sc.routes:
        entry = {"id": r.id, "nodes": list(r.nodes), "w_r": r.capacity}
        if r.cost is not None:
            entry["C_r"] = exact_str(r.cost)
        if r.operator_id is not None:
            entry["operator"] = r.operator_id
        if r.vehicle_id is not None:
            entry["vehicle"] = r.vehicle_id
        if r.dispatch_node is not None:
            entry["dispatch_node"] = r.dispatch_node
        if r.min_operator_benefit is not None:
            entry["b_r"] = exact_str(r.min_operator_benefit)
        if not r.strict:
            entry["strict"] = False
        routes.append(entry)
    doc["routes"] = routes
    users = []
    for u in sc.users:
        util = ({k: exact_str(v) for k, v in sorted(u.utility.items())} if isinstance(u.utility, dict)
                else exact_str(u.utility))
        entry = {"id": u.id, "origin": u.origin, "destination": u.destination, "q_s": u.demand, "U": util}
        if u.min_benefit:
            entry["g"] = exact_str(u.min_benefit)
        if u.observed_fare is not None:
            entry["observed_fare"] = exact_str(u.observed_fare)
        if u.request_time is not None:
            entry["request_time"] = u.request_time
        users.append(entry)
    doc["users"] = users
    return doc


def dumps(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), indent=2) + "\n"


def loads(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc}") from exc
    return scenario_from_dict(doc)


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    return loads(text)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dumps(sc))


def scenario_from_instance(instance, operators=(), name: str = "") -> Scenario:
    return Scenario(instance.network, tuple(instance.users), tuple(instance.routes), instance.params,
                    instance.cost_rule, tuple(operators), name)


# --- CSV inputs -----------------------------------------------------------------------

TRIP_COLUMNS = ("id", "pickup_node", "dropoff_node", "request_time", "fare_usd", "passengers")


def parse_time(text: str) -> Fraction:
    """Epoch seconds or ISO-8601 (naive times are taken as UTC)."""
    text = text.strip()
    try:
        return frac(text)
    except (ValueError, ZeroDivisionError):
        pass
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ScenarioError(f"bad request_time {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - datetime(1970, 1, 1, tzinfo=timezone.utc)
    return Fraction(delta.days * 86400 + delta.seconds) + Fraction(delta.microseconds, 10**6)


def read_trips_csv(path) -> list:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in TRIP_COLUMNS if c not in (reader.fieldnames or [])]
            if missing:
                raise ScenarioError(f"{path}: missing columns {', '.join(missing)}")
            trips = []
            for line, row in enumerate(reader, start=2):
                try:
                    trips.append(TripRecord(row["id"], row["pickup_node"], row["dropoff_node"],
                                            parse_time(row["request_time"]), parse_number(row["fare_usd"], "fare"),
                                            int(row["passengers"])))
                except (ValueError, ValidationError) as exc:
                    raise ScenarioError(f"{path}:{line}: {exc}") from exc
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    return trips


def read_matrix_csv(path) -> tuple:
    """Square matrix with node ids in the header row and first column."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ScenarioError(f"{path}: empty matrix")
    header = [h.strip() for h in rows[0][1:]]
    if len(set(header)) != len(header):
        raise ScenarioError(f"{path}: duplicate node ids in header")
    table = {}
    for r in rows[1:]:
        node = r[0].strip()
        if node in table:
            raise ScenarioError(f"{path}: duplicate row {node!r}")
        if len(r) - 1 != len(header):
            raise ScenarioError(f"{path}: row {node!r} has {len(r) - 1} entries, expected {len(header)}")
        table[node] = {h: parse_number(v.strip(), f"{path} [{node}][{h}]") for h, v in zip(header, r[1:])}
    if sorted(table) != sorted(header):
        raise ScenarioError(f"{path}: row and column node ids differ")
    return header, table


def write_matrix_csv(path, nodes, table) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(nodes))
        for a in nodes:
            w.writerow([a] + [exact_str(table[a][b]) for b in nodes])


def write_trips_csv(path, trips) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIP_COLUMNS)
        for t in trips:
            w.writerow([t.id, t.pickup, t.dropoff, exact_str(t.request_time), exact_str(t.fare), t.passengers])


def load_network(minutes_csv, miles_csv) -> Network:
    nodes, minutes = read_matrix_csv(minutes_csv)
    nodes2, miles = read_matrix_csv(miles_csv)
    if sorted(nodes) != sorted(nodes2):
        raise ScenarioError("time and distance matrices cover different nodes")
    return Network.from_matrices(nodes, minutes, miles)


PIPELINE_KEYS = ("interval_s", "floor_s", "w_r")


def read_pipeline_params(path=None, exact: bool = True, tol: float = 1e-7) -> PipelineParams:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot read params {path}: {exc}") from exc
    cost_keys = ("tvot", "wait_multiplier", "walk_multiplier", "op_cost_per_mile", "min_operator_benefit",
                 "incompatible_cost")
    unknown = set(doc) - set(cost_keys) - set(PIPELINE_KEYS)
    if unknown:
        raise ScenarioError(f"unknown params: {', '.join(sorted(unknown))}")
    defaults = CostParams()
    cost = CostParams(**{k: parse_number(doc.get(k, getattr(defaults, k)), k) for k in cost_keys})
    try:
        return PipelineParams(cost, parse_number(doc.get("interval_s", 60), "interval_s"),
                              parse_number(doc.get("floor_s", 1), "floor_s"), int(doc.get("w_r", 3)), exact, tol)
    except ValidationError as exc:
        raise ScenarioError(str(exc)) from exc
