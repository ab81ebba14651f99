"""Deterministic text/CSV/JSON renderings of solver results (money to 6 decimals)."""

from __future__ import annotations

import csv
import io
import json

from ._num import money
from .assignment import Assignment
from .core import STATUS_OPTIMAL, AllocationOutcome, PriceSchedule


def _json(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def assignment_doc(instance, a: Assignment) -> dict:
    loads = []
    for r in sorted(instance.routes, key=lambda r: r.id):
        if r.id not in a.used_routes:
            continue
        for leg, (tail, head) in enumerate(r.legs):
            loads.append({"route": r.id, "leg": leg, "from": tail, "to": head, "riders": a.link_loads[(r.id, leg)]})
    return {
        "objective_raw": money(a.objective_raw),
        "objective_net": money(a.objective_net),
        "matches": [{"user": s, "route": r, "riders": k} for (s, r), k in sorted(a.x.items())],
        "used_routes": list(a.used_routes),
        "dummy_routes": sorted(r for r, d in a.dummy.items() if d),
        "link_loads": loads,
    }


def assignment_json(instance, a: Assignment) -> str:
    return _json(assignment_doc(instance, a))


def outcome_doc(outcome: AllocationOutcome) -> dict:
    doc = {"objective": outcome.objective, "status": outcome.status}
    if outcome.status == STATUS_OPTIMAL:
        doc["Z"] = money(outcome.value)
        doc["u"] = {k: money(v) for k, v in sorted(outcome.u.items())}
        doc["v"] = {k: money(v) for k, v in sorted(outcome.v.items())}
    return doc


def outcome_json(outcome: AllocationOutcome) -> str:
    return _json(outcome_doc(outcome))


def empty_core_doc(certificate) -> dict:
    return {
        "status": "empty_core",
        "certificate": [{"route": c.route, "members": list(c.members), "rhs": money(c.rhs)} for c in certificate],
    }


PRICE_HEADER = ("agent", "route", "user_optimal", "operator_optimal", "gap")


def price_table_csv(user: PriceSchedule, operator: PriceSchedule) -> str:
    rows = []
    for aid in sorted(user.prices):
        rid, pu = user.prices[aid]
        po = operator.price(aid)
        rows.append((aid, rid, money(pu), money(po), money(po - pu)))
    return _csv(PRICE_HEADER, rows)


def revenue_csv(user: PriceSchedule, operator: PriceSchedule, instance) -> str:
    rows = []
    for rid in sorted(user.revenue):
        rows.append((rid, money(instance.route_cost[rid]), money(user.revenue[rid]), money(operator.revenue[rid])))
    return _csv(("route", "C_r", "revenue_user_optimal", "revenue_operator_optimal"), rows)


GAP_HEADER = ("rank", "agent", "gap")


def gaps_csv(gaps) -> str:
    return _csv(GAP_HEADER, [(i + 1, aid, money(g)) for i, (aid, g) in enumerate(gaps)])


INTERVAL_HEADER = ("start_s", "end_s", "width_s", "depth", "status", "trips", "matched", "used_routes")


def intervals_csv(intervals) -> str:
    rows = []
    for r in intervals:
        matched = sum(r.assignment.x.values()) if r.assignment is not None else 0
        used = len(r.assignment.used_routes) if r.assignment is not None else 0
        rows.append((money(r.start, 3), money(r.end, 3), money(r.width, 3), r.depth, r.status,
                     " ".join(r.trip_ids), matched, used))
    return _csv(INTERVAL_HEADER, rows)


PIPELINE_PRICE_HEADER = ("trip", "agent", "route", "observed_fare", "user_optimal", "operator_optimal")


def pipeline_prices_csv(price_rows) -> str:
    return _csv(PIPELINE_PRICE_HEADER,
                [(t, a, r, money(f), money(pu), money(po)) for t, a, r, f, pu, po in price_rows])


def metrics_json(metrics: dict) -> str:
    doc = {}
    for k, v in metrics.items():
        if v is None or isinstance(v, int):
            doc[k] = v
        else:
            doc[k] = money(v)
    return _json(doc)


BENCH_HEADER = ("n", "routes", "demand_rows", "capacity_rows", "bigm_rows", "rows_match", "bb_nodes", "solve_s")


def bench_csv(rows) -> str:
    return _csv(BENCH_HEADER, [(r["n"], r["routes"], *r["rows"], "yes" if r["match"] else "no", r["nodes"],
                                f"{r['seconds']:.6f}") for r in rows])


def emit_report(results: dict) -> dict:
    """Render a bundle of results into ``{file name: text}``.

    Recognised keys: ``instance`` with ``assignment``; ``outcomes`` (a dict
    of name to outcome); ``prices`` (``user``/``operator`` schedules);
    ``gaps``; ``pipeline`` (a :class:`~stablefare.pipeline.PipelineReport`).
    """
    out = {}
    inst = results.get("instance")
    if "assignment" in results:
        out["assignment.json"] = assignment_json(inst, results["assignment"])
    for name, o in sorted(results.get("outcomes", {}).items()):
        out[f"{name}_optimal.json"] = outcome_json(o)
    prices = results.get("prices")
    if prices and "user" in prices and "operator" in prices:
        out["prices.csv"] = price_table_csv(prices["user"], prices["operator"])
        if inst is not None:
            out["revenue.csv"] = revenue_csv(prices["user"], prices["operator"], inst)
    if "gaps" in results:
        out["gaps.csv"] = gaps_csv(results["gaps"])
    rep = results.get("pipeline")
    if rep is not None:
        out["intervals.csv"] = intervals_csv(rep.intervals)
        out["metrics.json"] = metrics_json(rep.metrics)
        out["prices.csv"] = pipeline_prices_csv(rep.price_rows)
        out["gaps.csv"] = gaps_csv(rep.gaps)
    return out
