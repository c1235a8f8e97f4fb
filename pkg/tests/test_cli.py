"""Command-line behavior: exit codes, output schemas, reproducibility."""

import csv
import json
import os

import pytest

from energyshed.cli import main

CASE = """
function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
    1  3  100.0  0  0  0  1  1  0  345  1  1.06  0.94;
    2  1    0.0  0  0  0  1  1  0  345  1  1.06  0.94;
    3  1    0.0  0  0  0  1  1  0  345  1  1.06  0.94;
];
mpc.branch = [
    1  2  0  0.05  0  0  0  0  0  0  1  -360  360;
    2  3  0  0.05  0  0  0  0  0  0  1  -360  360;
];
"""

PROFILES = """bus,kind,t1,t2
1,load,1.0,1.0
1,gen,0.2,0.2
"""


@pytest.fixture
def scenario_file(tmp_path):
    (tmp_path / "tiny.m").write_text(CASE)
    (tmp_path / "tiny.csv").write_text(PROFILES)
    cfg = {
        "case_file": "tiny.m",
        "profiles_file": "tiny.csv",
        "step_hours": 1.0,
        "partition": [[1]],
        "cap_plus": {"1": 0.3, "3": 10.0},
        "cap_minus": {"3": 10.0},
        "alpha": {"1": 1.0, "2": 1.0, "3": 1.0},
        "beta": {"1": 1.0, "2": 1.0, "3": 1.0},
        "flex_only_at_load_buses": False,
    }
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def run(args, out):
    return main(args + ["--out", str(out)])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestExitCodes:
    def test_validate_ok(self, scenario_file, tmp_path):
        assert run(["validate", "--scenario", scenario_file],
                   tmp_path / "o") == 0
        doc = json.loads((tmp_path / "o" / "validation.json").read_text())
        assert doc == {"ok": True, "violations": []}

    def test_validate_failure(self, scenario_file, tmp_path, capsys):
        cfg = json.loads(open(scenario_file).read())
        cfg["cap_plus"] = {"1": -5.0}
        bad = os.path.join(os.path.dirname(scenario_file), "bad.json")
        with open(bad, "w") as fh:
            json.dump(cfg, fh)
        assert run(["validate", "--scenario", bad], tmp_path / "o") == 2
        doc = json.loads((tmp_path / "o" / "validation.json").read_text())
        assert not doc["ok"]
        assert "negative-budget" in {v["code"] for v in doc["violations"]}
        assert "negative-budget" in capsys.readouterr().err

    def test_missing_scenario(self, tmp_path):
        assert run(["validate", "--scenario", "/no/such.json"],
                   tmp_path / "o") == 2

    def test_infeasible_floor(self, scenario_file, tmp_path):
        # the linear frontier for bus 1 is 0.5; a floor of 5 cannot be met
        assert run(["solve-p1", "--scenario", scenario_file,
                    "--x-min", "5.0"], tmp_path / "o") == 3

    def test_solve_success(self, scenario_file, tmp_path):
        assert run(["solve-p1", "--scenario", scenario_file,
                    "--x-min", "0.4"], tmp_path / "o") == 0


class TestOutputs:
    def test_manifest_contents(self, scenario_file, tmp_path):
        run(["baseline", "--scenario", scenario_file], tmp_path / "o")
        man = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert man["command"] == "baseline"
        assert man["exit_code"] == 0
        assert set(man["inputs"]) == {"tiny.json", "tiny.m", "tiny.csv"}
        assert all(len(h) == 64 for h in man["inputs"].values())
        assert {"energyshed", "numpy", "scipy", "python"} <= set(man["versions"])
        assert "report.csv" in man["outputs"]

    def test_p2_trace_schema(self, scenario_file, tmp_path):
        assert run(["design-p2", "--scenario", scenario_file,
                    "--epsilon", "1e-6"], tmp_path / "o") == 0
        rows = read_csv(tmp_path / "o" / "trace.csv")
        assert len(rows) <= 20
        assert set(rows[0]) == {"tau", "feasible"}
        assert {r["feasible"] for r in rows} <= {"true", "false"}
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["tau_star"] == pytest.approx(0.5, abs=2e-6)

    def test_p4_trace_schema(self, scenario_file, tmp_path):
        assert run(["design-p4", "--scenario", scenario_file,
                    "--zeta", "1e6", "--mesh", "0.25"], tmp_path / "o") == 0
        rows = read_csv(tmp_path / "o" / "trace.csv")
        assert set(rows[0]) == {"tau", "f_tau", "cost"}
        floats = [float(r["tau"]) for r in rows]
        assert floats == sorted(floats)
        assert any(r["f_tau"] == "-inf" for r in rows)  # beyond the frontier

    def test_pareto_schema(self, scenario_file, tmp_path):
        grid = tmp_path / "zg.json"
        grid.write_text("[0.01, 100.0]")
        assert run(["pareto", "--scenario", scenario_file, "--mesh", "0.25",
                    "--zeta-grid", str(grid)], tmp_path / "o") == 0
        rows = read_csv(tmp_path / "o" / "front.csv")
        assert [r["zeta"] for r in rows] == ["0.01", "100.0"]
        assert all(float(r["cost_normalized"]) >= 1.0 - 1e-6 for r in rows)

    def test_analyze_schema(self, scenario_file, tmp_path):
        assert run(["analyze", "--scenario", scenario_file,
                    "--budget-step", "0.5", "--max-budget", "1.0"],
                   tmp_path / "o") == 0
        rows = read_csv(tmp_path / "o" / "curves.csv")
        assert set(rows[0]) == {"shed", "budget", "budget_mwh", "max_ratio",
                                "mode"}
        # base ratio 0.2, unit slope in normalized budget
        ratios = [float(r["max_ratio"]) for r in rows]
        assert ratios == pytest.approx([0.2, 0.7, 1.2])

    def test_json_format(self, scenario_file, tmp_path):
        assert run(["baseline", "--scenario", scenario_file,
                    "--format", "json"], tmp_path / "o") == 0
        doc = json.loads((tmp_path / "o" / "report.json").read_text())
        assert "summary" in doc and "report" in doc
        assert doc["summary"]["base_mva"] == 100.0

    def test_x_min_file(self, scenario_file, tmp_path):
        floors = tmp_path / "floors.json"
        floors.write_text('{"0": 0.4}')
        assert run(["solve-p1", "--scenario", scenario_file,
                    "--x-min", str(floors)], tmp_path / "o") == 0
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["min_ratio"] >= 0.4 - 1e-6


class TestReproducibility:
    def test_byte_identical_outputs(self, scenario_file, tmp_path):
        for d in ("a", "b"):
            assert run(["design-p2", "--scenario", scenario_file],
                       tmp_path / d) == 0
        for name in ("trace.csv", "report.csv", "summary.json"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a == b, name
        ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
        mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
        ma.pop("timestamp"), mb.pop("timestamp")
        assert ma == mb

    def test_threads_env_fallback(self, scenario_file, tmp_path, monkeypatch):
        monkeypatch.setenv("ESHED_THREADS", "3")
        assert run(["design-p4", "--scenario", scenario_file,
                    "--zeta", "1.0", "--mesh", "0.5"], tmp_path / "o") == 0
        man = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert man["config"]["threads"] == 3
