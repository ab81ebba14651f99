"""Command-line entry point: ``stablefare <command> ...``.

Exit status: 0 success, 1 bad input, 2 empty core.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
import timeit
from pathlib import Path

from . import report
from .assignment import SizeGuardError, SolverOptions, build_model, solve_assignment
from .core import (
    OPERATOR_OPTIMAL,
    STATUS_OPTIMAL,
    USER_OPTIMAL,
    CoalitionExplosionError,
    build_stability_system,
    compute_prices,
    infeasibility_certificate,
    solve_system,
)
from .model import Network, ValidationError
from .pipeline import model_size, pipeline_model, run_pipeline
from .scenario import (
    ScenarioError,
    load_network,
    load_scenario,
    read_pipeline_params,
    read_trips_csv,
    scenario_from_instance,
)
from .variants import add_vehicle_path_constraints

EXIT_OK, EXIT_INPUT, EXIT_EMPTY = 0, 1, 2
CAP_ENV = "STABLEFARE_MAX_COALITIONS"


def parse_range(text: str) -> list:
    """``"5"``, ``"2..10"`` or ``"1,3,5"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            out = list(range(int(lo), int(hi) + 1))
        else:
            out = [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive")
    return out


def _common(p: argparse.ArgumentParser) -> None:
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exact", dest="exact", action="store_true", default=True,
                      help="rational arithmetic (default)")
    mode.add_argument("--float", dest="exact", action="store_false", help="floating-point arithmetic")
    p.add_argument("--tol", type=float, default=1e-7, help="feasibility tolerance in float mode")
    p.add_argument("--seed", type=int, default=None, help="seed for synthetic inputs")
    p.add_argument("--max-coalitions", type=int, default=None,
                   help="coalition enumeration cap (env STABLEFARE_MAX_COALITIONS)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stablefare", description="Assignment and stable fare allocation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="optimal assignment of users to routes")
    p.add_argument("scenario", nargs="?", help="scenario JSON (omit with --seed for a random instance)")
    p.add_argument("--backend", choices=("embedded", "highs"), default="embedded")
    p.add_argument("-o", "--out", help="write the assignment JSON here instead of stdout")
    _common(p)

    p = sub.add_parser("allocate", help="user- and operator-optimal stable outcomes")
    p.add_argument("scenario", nargs="?")
    p.add_argument("--objective", choices=("user", "operator", "both"), default="both")
    p.add_argument("-o", "--out", help="directory for <objective>_optimal.json files")
    _common(p)

    p = sub.add_parser("price", help="per-user ticket prices at both core extremes")
    p.add_argument("scenario", nargs="?")
    p.add_argument("-o", "--out", help="directory for prices.csv and revenue.csv")
    _common(p)

    p = sub.add_parser("pipeline", help="interval-partitioned trip batch with pooling")
    p.add_argument("--trips", help="trips CSV")
    p.add_argument("--minutes", help="travel-time matrix CSV")
    p.add_argument("--miles", help="distance matrix CSV")
    p.add_argument("--params", help="JSON with cost parameters, interval_s, floor_s, w_r")
    p.add_argument("--synthetic", type=int, metavar="N", help="generate N random trips instead (uses --seed)")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--timing", action="store_true", help="also write wall-clock timing.json")
    _common(p)

    p = sub.add_parser("bench", help="model size and solve time versus number of trips")
    p.add_argument("--n", type=parse_range, default=parse_range("1..15"), help="sizes, e.g. 1..15")
    p.add_argument("--repeat", type=int, default=5, help="timing repeats (minimum is reported)")
    p.add_argument("-o", "--out", help="write CSV here instead of stdout")
    _common(p)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("scenario")
    _common(p)
    return parser


def _load(args):
    if args.scenario:
        return load_scenario(args.scenario)
    if args.seed is None:
        raise ScenarioError("give a scenario file or --seed for a random instance")
    from .synthetic import random_instance

    return scenario_from_instance(random_instance(args.seed), name=f"random-{args.seed}")


def _write(text: str, path=None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _solve(sc, args):
    inst = sc.instance()
    opts = SolverOptions(exact=args.exact, tol=args.tol, backend=getattr(args, "backend", "embedded"))
    model = build_model(inst)
    if sc.has_fleet:
        add_vehicle_path_constraints(model, sc.operators)
    return inst, solve_assignment(model, opts)


def cmd_solve(args) -> int:
    sc = _load(args)
    inst, a = _solve(sc, args)
    _write(report.assignment_json(inst, a), args.out)
    return EXIT_OK


def _allocate(sc, args, names):
    inst, a = _solve(sc, args)
    system = build_stability_system(inst, a, ownership=sc.ownership)
    objs = {"user": USER_OPTIMAL, "operator": OPERATOR_OPTIMAL}
    outcomes = {n: solve_system(inst, system, objs[n], exact=args.exact, tol=args.tol) for n in names}
    return inst, a, system, outcomes


def _report_empty(system, args) -> int:
    cert = infeasibility_certificate(system, exact=args.exact)
    sys.stdout.write(report._json(report.empty_core_doc(cert)))
    return EXIT_EMPTY


def cmd_allocate(args) -> int:
    sc = _load(args)
    names = ["user", "operator"] if args.objective == "both" else [args.objective]
    inst, a, system, outcomes = _allocate(sc, args, names)
    if any(o.status != STATUS_OPTIMAL for o in outcomes.values()):
        return _report_empty(system, args)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for n, o in outcomes.items():
            (out / f"{n}_optimal.json").write_text(report.outcome_json(o))
    else:
        doc = {f"{n}_optimal": report.outcome_doc(o) for n, o in outcomes.items()}
        sys.stdout.write(report._json(doc))
    return EXIT_OK


def cmd_price(args) -> int:
    sc = _load(args)
    inst, a, system, outcomes = _allocate(sc, args, ["user", "operator"])
    if any(o.status != STATUS_OPTIMAL for o in outcomes.values()):
        return _report_empty(system, args)
    prices = {n: compute_prices(inst, a, o) for n, o in outcomes.items()}
    table = report.price_table_csv(prices["user"], prices["operator"])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "prices.csv").write_text(table)
        (out / "revenue.csv").write_text(report.revenue_csv(prices["user"], prices["operator"], inst))
    else:
        sys.stdout.write(table)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    params = read_pipeline_params(args.params, exact=args.exact, tol=args.tol)
    if args.synthetic is not None:
        from .synthetic import euclidean_trips

        trips, nodes, minutes, miles = euclidean_trips(args.seed or 0, args.synthetic)
        network = Network.from_matrices(nodes, minutes, miles)
    else:
        if not (args.trips and args.minutes and args.miles):
            raise ScenarioError("pipeline needs --trips, --minutes and --miles (or --synthetic N)")
        trips = read_trips_csv(args.trips)
        network = load_network(args.minutes, args.miles)
    rep = run_pipeline(trips, network, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in report.emit_report({"pipeline": rep}).items():
        (out / name).write_text(text)
    if args.timing:
        (out / "timing.json").write_text(report._json(
            {"total_s": round(rep.timing["total_s"], 6), "interval_s": [round(t, 6) for t in rep.timing["interval_s"]]}))
    m = rep.metrics
    print(f"{m['trips']} trips, {m['intervals']} intervals ({m['empty_core_at_floor']} empty at floor), "
          f"share rate {float(m['share_rate']):.3f}, VMT {float(m['vmt_single']):.2f} -> {float(m['vmt_shared']):.2f}")
    return EXIT_OK


def bench_rows(sizes, seed: int = 0, repeat: int = 5, exact: bool = True, tol: float = 1e-7) -> list:
    """Row counts and best-of-``repeat`` solve time (assignment plus both core extremes) per size.

    Times are process CPU seconds measured with :mod:`timeit` (garbage
    collection off). Repeats run in rounds over all sizes, so a slow spell on
    a shared host inflates every size of one round instead of one size.
    """
    cases = []
    for n in sizes:
        inst, model = pipeline_model(n, seed)
        cases.append((n, inst, model.row_counts()))
    best: dict = {}
    nodes: dict = {}
    for _ in range(max(1, repeat)):
        for n, inst, _ in cases:
            def run(inst=inst, n=n):
                a = solve_assignment(build_model(inst), SolverOptions(exact=exact, tol=tol))
                system = build_stability_system(inst, a)
                for obj in (USER_OPTIMAL, OPERATOR_OPTIMAL):
                    solve_system(inst, system, obj, exact=exact, tol=tol)
                nodes[n] = a.nodes_explored

            dt = timeit.Timer(run, timer=time.process_time).timeit(number=1)
            best[n] = min(dt, best.get(n, dt))
    return [{"n": n, "routes": len(inst.routes), "rows": counts, "match": counts == model_size(n),
             "nodes": nodes[n], "seconds": best[n]} for n, inst, counts in cases]


def cmd_bench(args) -> int:
    rows = bench_rows(args.n, args.seed or 0, args.repeat, args.exact, args.tol)
    _write(report.bench_csv(rows), args.out)
    return EXIT_OK


def lint(sc) -> list:
    """Warnings for a scenario that validates but is probably not what was meant."""
    inst = sc.instance()
    notes = []
    for u in inst.users:
        if not any(inst.geometry[(u.id, r.id)].compatible for r in inst.routes):
            notes.append(f"user {u.id} has no compatible route")
        elif not any(inst.payoff[(u.id, r.id)] > 0 for r in inst.routes):
            notes.append(f"user {u.id} has zero payoff on every route")
    for r in inst.routes:
        if not any(inst.payoff[(u.id, r.id)] > 0 for u in inst.users):
            notes.append(f"route {r.id} cannot earn anything from any user")
    if sc.operators:
        owner = sc.ownership or {}
        for r in inst.routes:
            if r.id not in owner:
                notes.append(f"route {r.id} has no operator")
    return notes


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    notes = lint(sc)
    print(f"ok: {len(sc.users)} users, {len(sc.routes)} routes, {len(sc.network.nodes)} nodes")
    for n in notes:
        print(f"warning: {n}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "allocate": cmd_allocate,
    "price": cmd_price,
    "pipeline": cmd_pipeline,
    "bench": cmd_bench,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    saved = os.environ.get(CAP_ENV)
    if args.max_coalitions is not None:
        os.environ[CAP_ENV] = str(args.max_coalitions)
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, ValidationError, SizeGuardError, CoalitionExplosionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        # the flag only applies to this invocation
        if saved is None:
            os.environ.pop(CAP_ENV, None)
        else:
            os.environ[CAP_ENV] = saved


if __name__ == "__main__":
    sys.exit(main())
