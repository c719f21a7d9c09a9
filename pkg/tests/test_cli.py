import csv
import json
import subprocess
import sys

import pytest

from sharedlane.cli import main, parse_grid, parse_seeds, UsageError
from sharedlane.scenario import data_path

FAST = ["--jobs", "1"]


def run_cli(*argv):
    return main([str(a) for a in argv])


def test_parse_helpers():
    assert parse_grid("0.5:5:0.5") == [0.5 * k for k in range(1, 11)]
    assert parse_grid("0.02,0.1") == [0.02, 0.1]
    assert parse_seeds("100") == 100 and parse_seeds("[42]") == [42] and parse_seeds("1,2") == [1, 2]
    for bad in ("", "1:2:0", "x"):
        with pytest.raises(UsageError):
            parse_grid(bad)
    with pytest.raises(UsageError):
        parse_seeds("0")


def test_synth_nominal(tmp_path):
    code = run_cli("synth", "--out", tmp_path)
    cert = json.loads((tmp_path / "certificate.json").read_text())
    gains = json.loads((tmp_path / "gains.json").read_text())
    assert cert["passed"] is True and code == 0
    assert len(gains["K_AV"]) == 2 and (tmp_path / "synth_diagnostics.json").exists()


def test_synth_mic(tmp_path):
    assert run_cli("synth", "--beta", "5", "--out", tmp_path) == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["passed"] and cert["beta"] == 5.0 and cert["gamma"] > 1.0


def test_broken_scenario_exit_1(tmp_path):
    d = json.loads(data_path("ngsim_scenario.json").read_text())
    d["driver"]["a_1"] = 0.0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d))
    assert run_cli("synth", "--scenario", bad, "--out", tmp_path) == 1
    assert run_cli("synth", "--scenario", tmp_path / "missing.json", "--out", tmp_path) == 1


def test_usage_error_exit_1(tmp_path):
    assert run_cli("montecarlo", "--seeds", "zero", "--out", tmp_path) == 1
    assert run_cli("no-such-command") == 1


def test_montecarlo_single_seed_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli("montecarlo", "--seeds", "[42]", "--scheme", "human_only,nominal_shared", "--out", out,
                       *FAST) == 0
    for name in ("montecarlo_summary.json", "montecarlo_runs.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    summary = json.loads((a / "montecarlo_summary.json").read_text())
    assert set(summary["schemes"]) == {"human_only", "nominal_shared"}
    stats = summary["schemes"]["human_only"]["stats"]["gamma_est"]
    assert stats["count"] == 1 and stats["variance"] == 0.0 and stats["min"] == stats["max"]
    assert (a / "montecarlo.meta.json").exists()


def test_run_writes_trace(tmp_path):
    assert run_cli("run", "--scheme", "nominal_shared", "--seeds", "[7]", "--out", tmp_path) == 0
    with open(tmp_path / "run.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["t", "v_E", "s_EL", "v_F", "s_FE", "v_L", "eta", "eta_hat", "u_H", "u_AV", "u"]
    assert "gamma_est" in json.loads((tmp_path / "run_metrics.json").read_text())["metrics"]


def test_sweep_beta_small(tmp_path):
    assert run_cli("sweep-beta", "--beta", "1,3", "--seeds", "2", "--out", tmp_path, *FAST) == 0
    with open(tmp_path / "sweep_beta.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["beta"] for r in rows] == ["nominal", "1.0", "3.0"]
    assert float(rows[1]["gamma0"]) <= float(rows[2]["gamma0"])


def test_sweep_obs_small(tmp_path):
    assert run_cli("sweep-obs", "--alpha", "0.1", "--q", "0.1", "--seeds", "2", "--path-horizon", "2000",
                   "--out", tmp_path, *FAST) == 0
    with open(tmp_path / "sweep_obs.csv") as fh:
        rows = list(csv.DictReader(fh))
    pts = {(float(r["alpha"]), float(r["q"])) for r in rows}
    assert pts == {(0.0, 0.0), (0.1, 0.1)}


def test_replay_missing_follower(tmp_path):
    f = tmp_path / "ev.csv"
    rows = ["t,vehicle_id,lane_id,x,v"]
    for i in range(30):
        t = round(0.1 * i, 6)
        rows.append(f"{t},1,{1 if i < 15 else 2},{10 * t},10")
        rows.append(f"{t},2,2,{30 + 10 * t},10")
    f.write_text("\n".join(rows) + "\n")
    assert run_cli("replay", "--events", f, "--out", tmp_path, *FAST) == 1


def test_calibrate_empty_file(tmp_path):
    f = tmp_path / "empty.csv"
    f.write_text("")
    assert run_cli("calibrate", f, "--out", tmp_path) == 1


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sharedlane", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
