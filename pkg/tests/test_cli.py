"""Command-line round-trips, exit codes, and deterministic output."""

from __future__ import annotations

import csv
import hashlib
import json

import pytest

import percolate.cli as cli
from percolate.errors import SolverError
from conftest import make_scenario


@pytest.fixture()
def scenario_file(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(make_scenario()))
    return str(path)


def _load(path):
    with open(path) as fh:
        return json.load(fh)


def test_solve_stationary_roundtrip(scenario_file, tmp_path):
    out = tmp_path / "st.json"
    rc = cli.main([
        "solve-stationary", "--config", scenario_file, "--policy", "trigger:3",
        "--out", str(out),
    ])
    assert rc == 0
    doc = _load(out)
    res = doc["result"]
    assert abs(sum(res["weights"]) + res["tail_mass"] - 1.0) < 1e-8
    assert res["grid_mass"] == pytest.approx(sum(res["weights"]))
    assert res["c_bar"] > 0
    assert res["stable"] is True
    assert doc["manifest"]["tool"] == "percolate"
    assert doc["manifest"]["config_sha256"]
    # Volatile data (timings, output paths) lives only in the sidecar so the
    # main document stays byte-stable across reruns.
    assert "wall_time_s" not in doc["manifest"]
    sidecar = _load(str(out) + ".manifest.json")
    assert sidecar["tool"] == "percolate"
    assert sidecar["wall_time_s"] >= 0
    assert sidecar["outputs"] == [str(out)]


def test_simulate_dynamics_csv(scenario_file, tmp_path):
    out = tmp_path / "traj.csv"
    rc = cli.main([
        "simulate-dynamics", "--config", scenario_file, "--policy", "trigger:2",
        "--t-end", "5", "--dt-out", "1", "--out", str(out),
    ])
    assert rc == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    times = sorted({float(r["time"]) for r in rows})
    assert times == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    # Zero-weight bins are omitted; the delta start only has its entry bin.
    t0 = {r["precision"] for r in rows if float(r["time"]) == 0.0}
    assert t0 == {"1", "tail"}
    # Pairs of one-signal searchers pool to two signals and stop there, so the
    # reachable support is exactly {1, 2}.
    final = [r for r in rows if float(r["time"]) == 5.0]
    assert {r["precision"] for r in final} == {"1", "2", "tail"}
    total = sum(float(r["weight"]) for r in final)
    assert abs(total - 1.0) < 1e-6


def test_simulate_dynamics_point_init(scenario_file, tmp_path):
    csv_out = tmp_path / "traj.csv"
    rc = cli.main([
        "simulate-dynamics", "--config", scenario_file, "--policy", "trigger:2",
        "--t-end", "2", "--dt-out", "1", "--init", "point:5", "--out", str(csv_out),
    ])
    assert rc == 0
    with open(csv_out) as fh:
        rows = list(csv.DictReader(fh))
    start = [r for r in rows if float(r["time"]) == 0.0 and r["precision"] != "tail"]
    assert [(r["precision"], float(r["weight"])) for r in start] == [("5", 1.0)]

    json_out = tmp_path / "traj.json"
    rc = cli.main([
        "simulate-dynamics", "--config", scenario_file, "--policy", "trigger:2",
        "--t-end", "2", "--init", "point:5", "--out", str(json_out),
    ])
    assert rc == 0
    res = _load(json_out)["result"]
    assert res["times"][-1] == 2.0
    assert len(res["final_weights"]) == 65
    assert res["mass"][-1] == pytest.approx(1.0, abs=1e-6)
    assert res["l1_gap_to_stationary"] > 0


def test_best_response_roundtrip(scenario_file, tmp_path):
    out = tmp_path / "br.json"
    rc = cli.main([
        "best-response", "--config", scenario_file, "--market", "trigger:3",
        "--out", str(out),
    ])
    assert rc == 0
    res = _load(out)["result"]
    assert res["market_c_bar"] > 0
    assert isinstance(res["trigger"], int)
    assert len(res["values"]) == 65
    assert 0 < res["contraction_q"] < 1
    lo, hi = res["interval"]
    assert lo <= res["trigger"] <= hi
    assert res["n_bar"] == 30


def test_solve_equilibrium_roundtrip(tmp_path):
    path = tmp_path / "scen.json"
    path.write_text(json.dumps(make_scenario(cost={"type": "linear", "kappa": 0.05})))
    out = tmp_path / "eq.json"
    rc = cli.main(["solve-equilibrium", "--config", str(path), "--out", str(out)])
    assert rc == 0
    res = _load(out)["result"]
    assert res["triggers"] == [0, 1, 5, 6]
    assert [e["trigger"] for e in res["equilibria"]] == [0, 1, 5, 6]
    assert res["pareto_best"] == 6
    assert res["n_bar"] == 63
    assert res["scan_bound"] == 63
    assert res["minimal_search"]["is_equilibrium"] is True
    assert res["minimal_search"]["gain"] <= res["minimal_search"]["threshold"]
    for t in res["triggers"]:
        lo, hi = res["correspondence"][str(t)]
        assert lo <= t <= hi
    for eq in res["equilibria"]:
        assert set(eq["value_at_entry"]) == {"1"}
        # Triggers at or below the entry floor leave every populated bin
        # stopped, so only the deeper equilibria carry positive effort.
        if eq["trigger"] > 1:
            assert eq["c_bar"] > 0
        else:
            assert eq["c_bar"] == 0.0


def test_intervention_subsidy_roundtrip(tmp_path):
    path = tmp_path / "scen.json"
    path.write_text(json.dumps(make_scenario(cost={"type": "linear", "kappa": 0.05})))
    out = tmp_path / "sub.json"
    rc = cli.main([
        "intervention", "subsidy", "--config", str(path), "--delta", "0.02",
        "--out", str(out),
    ])
    assert rc == 0
    res = _load(out)["result"]
    assert res["kind"] == "subsidy"
    assert res["delta"] == 0.02
    assert res["tax"] > 0
    assert res["treated_trigger"] >= res["baseline_trigger"]
    assert res["verdict"] in {"improves", "harms", "ambiguous"}
    assert set(res["welfare_delta_at_entry"]) == {"1"}


def test_intervention_educate_roundtrip(tmp_path):
    path = tmp_path / "scen.json"
    path.write_text(json.dumps(make_scenario(cost={"type": "linear", "kappa": 0.02})))
    out = tmp_path / "edu.json"
    rc = cli.main([
        "intervention", "educate", "--config", str(path), "--signals", "1",
        "--out", str(out),
    ])
    assert rc == 0
    res = _load(out)["result"]
    assert res["kind"] == "educate"
    assert res["signals"] == 1
    assert res["tax"] == 0.0
    assert res["treated_trigger"] <= res["baseline_trigger"]
    assert res["verdict"] in {"improves", "harms", "ambiguous"}


def test_montecarlo_run_and_value(scenario_file, tmp_path):
    out = tmp_path / "mc.json"
    rc = cli.main([
        "montecarlo", "run", "--config", scenario_file, "--policy", "trigger:3",
        "--population", "4000", "--horizon", "10", "--seed", "5", "--out", str(out),
    ])
    assert rc == 0
    res = _load(out)["result"]
    assert res["population"] == 4000
    assert res["events"] == res["matches"] + res["resets"] + res["exits"]
    assert len(res["final_frequencies"]) == len(res["solver_weights"])
    assert res["max_frequency_gap"] < 0.05

    # trigger:1 is a fixed point here, so the simulated policy value and the
    # solver's optimal value at the entry bin coincide up to sampling noise.
    out2 = tmp_path / "val.json"
    rc = cli.main([
        "montecarlo", "value", "--config", scenario_file, "--policy", "trigger:1",
        "--replications", "5000", "--seed", "5", "--out", str(out2),
    ])
    assert rc == 0
    res2 = _load(out2)["result"]
    assert res2["entry_precision"] == 1
    assert res2["replications"] == 5000
    assert abs(res2["estimate"] - res2["solver_value"]) < 4 * res2["half_width"]


def test_counterexample_roundtrip(tmp_path):
    path = tmp_path / "scen.json"
    path.write_text(json.dumps(make_scenario(
        c_hi=1.5, pi={"1": 0.2, "2": 0.6, "3": 0.2},
    )))
    out = tmp_path / "cx.json"
    rc = cli.main(["counterexample", "--config", str(path), "--out", str(out)])
    assert rc == 0
    res = _load(out)["result"]
    # Extra first-rung effort thins the effort-weighted mass above it even
    # though it raises average effort.
    assert res["derivative_mass_above_2_wrt_c1"] == pytest.approx(-0.00576997, abs=1e-4)
    assert res["derivative_average_effort_wrt_c1"] == pytest.approx(0.0731143, abs=1e-4)
    assert res["epsilon"] == 1e-3
    assert not res["reduced_dominates"] and not res["full_dominates"]
    assert res["relation"] == "crossing"
    assert res["first_violation_reduced"] in (0, 1)
    assert res["first_violation_full"] == 2


def test_policy_list_file(scenario_file, tmp_path):
    plist = tmp_path / "efforts.json"
    plist.write_text(json.dumps([1.0, 1.0, 0.5, 0.0]))
    out = tmp_path / "st.json"
    rc = cli.main([
        "solve-stationary", "--config", scenario_file,
        "--policy", f"list:{plist}", "--out", str(out),
    ])
    assert rc == 0
    assert _load(out)["result"]["c_bar"] > 0


def test_sweep_writes_csv(scenario_file, tmp_path, monkeypatch):
    monkeypatch.setenv("PERCOLATE_THREADS", "1")
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"eta": [0.5, 1.0], "rho": [0.3, 0.5]}))
    out = tmp_path / "sweep.csv"
    rc = cli.main([
        "sweep", "--config", scenario_file, "--grid", str(grid),
        "--task", "solve-stationary", "--policy", "trigger:3", "--out", str(out),
    ])
    assert rc == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert {(r["eta"], r["rho"]) for r in rows} == {
        ("0.5", "0.3"), ("0.5", "0.5"), ("1.0", "0.3"), ("1.0", "0.5")
    }
    assert all(float(r["c_bar"]) > 0 for r in rows)
    assert all(0 <= float(r["tail_mass"]) < 0.1 for r in rows)


def test_sweep_accepts_inline_grid(scenario_file, tmp_path, monkeypatch):
    monkeypatch.setenv("PERCOLATE_THREADS", "1")
    out = tmp_path / "sweep.csv"
    rc = cli.main([
        "sweep", "--config", scenario_file, "--grid", '{"eta": [0.5, 1.0]}',
        "--task", "solve-stationary", "--policy", "trigger:3", "--out", str(out),
    ])
    assert rc == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["eta"] for r in rows] == ["0.5", "1.0"]


def test_sweep_requires_out(scenario_file, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"eta": [0.5]}))
    assert cli.main(["sweep", "--config", scenario_file, "--grid", str(grid)]) == 2


def test_sweep_rejects_malformed_grids(scenario_file, tmp_path):
    out = str(tmp_path / "sweep.csv")
    base = ["sweep", "--config", scenario_file, "--task", "solve-stationary", "--out", out]
    assert cli.main(base + ["--grid", '{"eta": 0.5}']) == 2
    assert cli.main(base + ["--grid", '{"eta": [0.5']) == 2
    assert cli.main(base + ["--grid", str(tmp_path / "nope.json")]) == 2


# ---------------------------------------------------------------------------
# Exit codes and determinism
# ---------------------------------------------------------------------------


def test_invalid_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(make_scenario(rho=1.5)))
    assert cli.main(["solve-stationary", "--config", str(bad), "--policy", "trigger:1"]) == 2


def test_missing_files_exit_2(scenario_file, tmp_path):
    missing = str(tmp_path / "nope.json")
    assert cli.main(["solve-stationary", "--config", missing, "--policy", "trigger:1"]) == 2
    assert cli.main([
        "solve-stationary", "--config", scenario_file, "--policy", f"list:{missing}",
    ]) == 2
    garbled = tmp_path / "garbled.json"
    garbled.write_text("{not json")
    assert cli.main(["solve-stationary", "--config", str(garbled), "--policy", "trigger:1"]) == 2


def test_bad_policy_spec_exits_2(scenario_file):
    rc = cli.main(["solve-stationary", "--config", scenario_file, "--policy", "trigger:bogus"])
    assert rc == 2


def test_solver_failure_exits_3(scenario_file, monkeypatch):
    def boom(*a, **k):
        raise SolverError("stub failure")

    monkeypatch.setattr(cli, "solve_stationary", boom)
    rc = cli.main(["solve-stationary", "--config", scenario_file, "--policy", "trigger:1"])
    assert rc == 3


def test_reruns_are_byte_identical(scenario_file, tmp_path):
    out = tmp_path / "eq.json"
    argv = ["solve-equilibrium", "--config", scenario_file, "--out", str(out)]
    digests = []
    for _ in range(2):
        assert cli.main(argv) == 0
        digests.append(hashlib.sha256(out.read_bytes()).hexdigest())
    assert digests[0] == digests[1]


def test_manifest_records_the_invocation(scenario_file, tmp_path):
    out = tmp_path / "state.json"
    argv = [
        "solve-stationary", "--config", scenario_file,
        "--policy", "trigger:2", "--out", str(out),
    ]
    assert cli.main(argv) == 0
    doc = json.loads(out.read_text())
    assert doc["manifest"]["command"] == argv
