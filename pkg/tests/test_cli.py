import csv
import json

import pytest

from isacctl.cli import main
from isacctl.model import benchmark_scenario, scenario_digest, serialize

GRID = "0.05,3,0.05,3,21,21"


@pytest.fixture
def scenario(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(serialize(benchmark_scenario(N=12)))
    return path


def data_files(out):
    return {p.relative_to(out).as_posix(): p.read_bytes()
            for p in sorted(out.rglob("*")) if p.is_file() and p.name != "manifest.json"}


def test_missing_scenario_writes_nothing(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["solve", "--scenario", str(tmp_path / "nope.json"), "--out", str(out)]) == 1
    assert not out.exists()
    assert "not found" in capsys.readouterr().err


def test_invalid_scenario_names_field(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"A": 0.9, "B": 1, "C": 1, "W": 0.3, "V": 0.1, "omega_x": 1,
                               "omega_a": 1, "N": 5, "lambda_s": 0.8, "lambda_c": 1.5}))
    assert main(["gains", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "lambda_c" in capsys.readouterr().err


def test_usage_errors_are_input_errors(tmp_path):
    assert main(["solve", "--scenario", "@benchmark"]) == 1
    assert main(["simulate", "--scenario", "@benchmark", "--out", str(tmp_path),
                 "--episodes", "0"]) == 1
    assert main(["simulate", "--scenario", "@benchmark", "--out", str(tmp_path),
                 "--seed", "-1"]) == 1
    assert main(["solve", "--scenario", "@benchmark", "--out", str(tmp_path),
                 "--grid", "1,0,1,0,3,3"]) == 1
    assert main(["solve", "--scenario", "@benchmark", "--out", str(tmp_path),
                 "--stages", "99"]) == 1


def test_solve_outputs(tmp_path, scenario):
    out = tmp_path / "sol"
    assert main(["solve", "--scenario", str(scenario), "--out", str(out), "--grid", GRID,
                 "--stages", "all"]) == 0
    for k in range(13):
        assert (out / f"value_{k}.csv").is_file() and (out / f"decision_{k}.csv").is_file()
        assert (out / "policy" / f"advantage_{k}.csv").is_file()
    summary = json.loads((out / "summary.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    assert summary["threshold_structure"] is True and summary["N"] == 12
    assert manifest["scenario_digest"] == scenario_digest(benchmark_scenario(N=12))
    assert manifest["grid"]["points_p"] == 21
    assert set(manifest["outputs"]) == set(data_files(out))
    rows = list(csv.reader((out / "decision_0.csv").open()))
    assert len(rows) == 22 and set(rows[5][1:]) <= {"0", "1"}


def test_solution_reuse_and_digest_mismatch(tmp_path, scenario, capsys):
    sol = tmp_path / "sol"
    assert main(["solve", "--scenario", str(scenario), "--out", str(sol), "--grid", GRID]) == 0
    args = ["--episodes", "50", "--seed", "3", "--solution", str(sol)]
    assert main(["simulate", "--scenario", str(scenario), "--out", str(tmp_path / "a")]
                + args) == 0
    in_proc = ["--episodes", "50", "--seed", "3", "--grid", GRID]
    assert main(["simulate", "--scenario", str(scenario), "--out", str(tmp_path / "b")]
                + in_proc) == 0
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    b = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert a["mean_reduced_cost"] == b["mean_reduced_cost"]

    other = tmp_path / "other.json"
    other.write_text(serialize(benchmark_scenario(N=12, lambda_c=0.9)))
    capsys.readouterr()
    code = main(["simulate", "--scenario", str(other), "--out", str(tmp_path / "c")] + args)
    err = capsys.readouterr().err
    assert code == 3
    assert scenario_digest(benchmark_scenario(N=12)) in err
    assert scenario_digest(benchmark_scenario(N=12, lambda_c=0.9)) in err
    assert not (tmp_path / "c").exists()


def test_compare(tmp_path, scenario):
    out = tmp_path / "cmp"
    assert main(["compare", "--scenario", str(scenario), "--out", str(out), "--grid", GRID,
                 "--episodes", "200", "--seed", "1"]) == 0
    rows = list(csv.DictReader((out / "compare.csv").open()))
    assert [r["policy"] for r in rows] == ["table", "always-sense", "always-comm",
                                           "periodic:2", "random:0.5", "myopic"]
    mean = {r["policy"]: float(r["mean_reduced"]) for r in rows}
    se = {r["policy"]: float(r["stderr"]) for r in rows}
    for name in mean:
        assert mean["table"] <= mean[name] + 3 * (se["table"] ** 2 + se[name] ** 2) ** 0.5


def test_gains_degenerate(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(serialize(benchmark_scenario(N=0).replace(B=0.0)))
    assert main(["gains", "--scenario", str(path), "--out", str(tmp_path / "g")]) == 0
    rows = list(csv.DictReader((tmp_path / "g" / "gains.csv").open()))
    assert [r["t"] for r in rows] == ["0", "1"]
    assert float(rows[0]["S_00"]) == pytest.approx(1.81) and float(rows[0]["L_00"]) == 0.0
    assert rows[1]["L_00"] == "nan"


def test_traces(tmp_path, scenario):
    out = tmp_path / "tr"
    assert main(["simulate", "--scenario", str(scenario), "--out", str(out), "--grid", GRID,
                 "--episodes", "20", "--policy", "myopic", "--traces", "2"]) == 0
    rows = list(csv.reader((out / "traces.csv").open()))
    assert len(rows) == 1 + 2 * 14


def test_byte_determinism(tmp_path, scenario):
    for cmd, extra in (("solve", ["--grid", GRID, "--stages", "0,5"]),
                       ("simulate", ["--grid", GRID, "--episodes", "100", "--traces", "1"]),
                       ("compare", ["--grid", GRID, "--episodes", "100"]),
                       ("gains", [])):
        dirs = [tmp_path / f"{cmd}{i}" for i in range(2)]
        for d in dirs:
            assert main([cmd, "--scenario", str(scenario), "--out", str(d)] + extra) == 0
        assert data_files(dirs[0]) == data_files(dirs[1])


def test_inputs_untouched(tmp_path, scenario):
    before = scenario.read_bytes()
    main(["simulate", "--scenario", str(scenario), "--out", str(tmp_path / "x"),
          "--grid", GRID, "--episodes", "10", "--p0", "2.0"])
    assert scenario.read_bytes() == before
