from __future__ import annotations

import json
import os
import subprocess
import sys
from fractions import Fraction as F

import pytest

from stablefare.cli import main, parse_range
from stablefare.scenario import (
    ScenarioError,
    dumps,
    exact_str,
    load_network,
    loads,
    parse_time,
    read_pipeline_params,
    read_trips_csv,
    save_scenario,
    scenario_from_instance,
    write_matrix_csv,
    write_trips_csv,
)
from stablefare.synthetic import euclidean_trips, random_instance

from _fixtures import EMPTY_CORE_SEED, calibrated_fleet, six_node_example


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def fleet_file(tmp_path):
    inst, ops = calibrated_fleet()
    path = tmp_path / "fleet.json"
    save_scenario(scenario_from_instance(inst, ops, "fleet"), path)
    return path


def test_exact_str_round_trip():
    for x in (F(3), F("1.25"), F(1, 3), F(-7, 8)):
        assert F(exact_str(x)) == x
    assert exact_str(F(1, 3)) == "1/3"


@pytest.mark.parametrize("seed", [0, 5, 17])
def test_json_round_trip_keeps_instance(seed):
    inst = random_instance(seed)
    back = loads(dumps(scenario_from_instance(inst))).instance()
    assert back.payoff.a == inst.payoff.a and back.route_cost == inst.route_cost
    assert dumps(scenario_from_instance(back)) == dumps(scenario_from_instance(inst))


def test_fleet_round_trip(fleet_file):
    sc = loads(fleet_file.read_text())
    assert sc.has_fleet and len(sc.routes) == 22
    assert set(sc.ownership.values()) == {"o1", "o2"}


@pytest.mark.parametrize("doc, message", [
    ([], "JSON object"),
    ({"format": "other/9"}, "format"),
    ({"format": "stablefare-scenario/1"}, "network"),
])
def test_bad_scenarios(doc, message):
    with pytest.raises(ScenarioError, match=message):
        loads(json.dumps(doc))


def test_parse_time():
    assert parse_time("12.5") == F(25, 2)
    assert parse_time("1970-01-01T00:01:00Z") == 60
    assert parse_time("1970-01-01 00:00:01.500") == F(3, 2)
    with pytest.raises(ScenarioError):
        parse_time("yesterday")


def write_pipeline_inputs(tmp_path, seed=3, n=15):
    trips, nodes, minutes, miles = euclidean_trips(seed, n)
    names = [str(x) for x in nodes]
    rename = dict(zip(nodes, names))
    mins = {rename[a]: {rename[b]: minutes[a][b] for b in nodes} for a in nodes}
    mls = {rename[a]: {rename[b]: miles[a][b] for b in nodes} for a in nodes}
    write_matrix_csv(tmp_path / "minutes.csv", names, mins)
    write_matrix_csv(tmp_path / "miles.csv", names, mls)
    write_trips_csv(tmp_path / "trips.csv", trips)
    return trips


def test_csv_round_trip(tmp_path):
    trips = write_pipeline_inputs(tmp_path)
    back = read_trips_csv(tmp_path / "trips.csv")
    assert [(t.id, str(t.pickup), t.request_time, t.fare) for t in trips] == \
           [(t.id, t.pickup, t.request_time, t.fare) for t in back]
    net = load_network(tmp_path / "minutes.csv", tmp_path / "miles.csv")
    assert len(net.nodes) > 1


def test_csv_errors(tmp_path):
    (tmp_path / "t.csv").write_text("id,pickup_node\n1,2\n")
    with pytest.raises(ScenarioError, match="missing columns"):
        read_trips_csv(tmp_path / "t.csv")
    (tmp_path / "m.csv").write_text(",a,b\na,0,1\nb,1\n")
    with pytest.raises(ScenarioError, match="entries"):
        load_network(tmp_path / "m.csv", tmp_path / "m.csv")
    with pytest.raises(ScenarioError):
        read_trips_csv(tmp_path / "absent.csv")


def test_pipeline_params_file(tmp_path):
    (tmp_path / "p.json").write_text(json.dumps({"tvot": "0.5", "interval_s": 30, "w_r": 4}))
    p = read_pipeline_params(tmp_path / "p.json")
    assert p.cost.tvot == F(1, 2) and p.interval_s == 30 and p.capacity == 4
    (tmp_path / "bad.json").write_text(json.dumps({"speed": 3}))
    with pytest.raises(ScenarioError, match="unknown"):
        read_pipeline_params(tmp_path / "bad.json")


def test_parse_range():
    assert parse_range("2..4") == [2, 3, 4]
    assert parse_range("1,5") == [1, 5]


# --- CLI ------------------------------------------------------------------------------

def test_cli_solve_random(capsys):
    code, out, _ = run(capsys, "solve", "--seed", 3)
    doc = json.loads(out)
    assert code == 0 and doc["objective_net"] == "21.000000"


def test_cli_allocate_writes_both_extremes(tmp_path, capsys, fleet_file):
    code, _, _ = run(capsys, "allocate", fleet_file, "--out", tmp_path / "out")
    assert code == 0
    user = json.loads((tmp_path / "out" / "user_optimal.json").read_text())
    op = json.loads((tmp_path / "out" / "operator_optimal.json").read_text())
    assert user["status"] == op["status"] == "optimal"
    assert user["v"]["o2/v1/3-2"] == "0.000000"


def test_cli_price_table(capsys, fleet_file):
    code, out, _ = run(capsys, "price", fleet_file)
    rows = {line.split(",")[0]: line.split(",") for line in out.strip().splitlines()[1:]}
    assert code == 0
    assert rows["u12"][2:4] == ["1.500000", "5.550000"]
    assert rows["u32"][2:4] == ["1.800000", "1.800000"]


def test_cli_empty_core_exit_code(tmp_path, capsys):
    path = tmp_path / "empty.json"
    save_scenario(scenario_from_instance(random_instance(EMPTY_CORE_SEED)), path)
    code, out, _ = run(capsys, "allocate", path)
    doc = json.loads(out)
    assert code == 2 and doc["status"] == "empty_core" and doc["certificate"]
    code, _, _ = run(capsys, "price", path, "--float")
    assert code == 2


def test_cli_input_errors(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{}")
    code, _, err = run(capsys, "solve", tmp_path / "bad.json")
    assert code == 1 and err.startswith("error:")
    code, _, err = run(capsys, "solve")
    assert code == 1
    code, _, _ = run(capsys, "pipeline", "--out", tmp_path / "o")
    assert code == 1


def test_cli_coalition_cap(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("STABLEFARE_MAX_COALITIONS", raising=False)
    inst, _ = six_node_example()
    path = tmp_path / "f2.json"
    save_scenario(scenario_from_instance(inst), path)
    code, _, err = run(capsys, "allocate", path, "--max-coalitions", 1)
    assert code == 1 and "coalitions" in err


def test_cli_validate(capsys, fleet_file):
    code, out, _ = run(capsys, "validate", fleet_file)
    assert code == 0 and out.startswith("ok: 4 users, 22 routes")


def test_cli_pipeline_deterministic(tmp_path, capsys):
    write_pipeline_inputs(tmp_path)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code, _, _ = run(capsys, "pipeline", "--trips", tmp_path / "trips.csv", "--minutes", tmp_path / "minutes.csv",
                         "--miles", tmp_path / "miles.csv", "--out", out)
        assert code == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]
    assert set(outs[0]) == {"intervals.csv", "metrics.json", "prices.csv", "gaps.csv"}


def test_cli_pipeline_synthetic_with_timing(tmp_path, capsys):
    code, out, _ = run(capsys, "pipeline", "--synthetic", 10, "--seed", 2, "--out", tmp_path, "--timing")
    assert code == 0 and "10 trips" in out
    assert "total_s" in json.loads((tmp_path / "timing.json").read_text())


def test_cli_bench_small(capsys):
    code, out, _ = run(capsys, "bench", "--n", "1..4", "--repeat", 1)
    lines = out.strip().splitlines()
    assert code == 0 and len(lines) == 5
    assert all(line.split(",")[5] == "yes" for line in lines[1:])


def test_cli_pipeline_same_bytes_across_hash_seeds(tmp_path):
    write_pipeline_inputs(tmp_path, seed=4, n=12)
    outs = []
    for h in ("0", "7"):
        out = tmp_path / f"h{h}"
        env = dict(os.environ, PYTHONHASHSEED=h)
        subprocess.run([sys.executable, "-m", "stablefare.cli", "pipeline", "--trips", str(tmp_path / "trips.csv"),
                        "--minutes", str(tmp_path / "minutes.csv"), "--miles", str(tmp_path / "miles.csv"),
                        "--out", str(out)], check=True, env=env, capture_output=True)
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]
