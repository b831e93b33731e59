import json
import subprocess
import sys

import pytest

from scaleup.cli import bundled, main
from scaleup.io import read_matrix


def read_bytes(path):
    return path.read_bytes()


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--reps", "2", "--seed", "3", "--scale", "0.05",
                 "--out", str(out)]) == 0
    return out


def test_simulate_is_byte_identical(simulated, tmp_path):
    assert main(["simulate", "--reps", "2", "--seed", "3", "--scale", "0.05",
                 "--out", str(tmp_path)]) == 0
    for name in ("rep_0000.csv", "rep_0001.csv", "rep_0000_truth.json", "schema.toml"):
        assert read_bytes(simulated / name) == read_bytes(tmp_path / name)
    truth = json.loads((simulated / "rep_0001_truth.json").read_text())
    assert truth["replication"] == 1


def test_estimate_writes_result_and_manifest(simulated, tmp_path, capsys):
    out = tmp_path / "ols.json"
    code = main(["estimate", "--data", str(simulated / "rep_0000.csv"), "--estimator", "OLS",
                 "--estimand", "TATT", "--seed", "1", "--config", str(bundled("quick.toml")),
                 "--out", str(out)])
    assert code == 0
    res = json.loads(out.read_text())
    assert res["estimand"] == "TATT" and res["lo"] <= res["point"] <= res["hi"]
    manifest = json.loads((tmp_path / "ols.json.manifest.json").read_text())
    assert "--jobs" not in manifest["argv"]


def test_study_only_tatt_exits_2(simulated, tmp_path, capsys):
    import csv
    with open(simulated / "rep_0000.csv") as f:
        rows = list(csv.DictReader(f))
    path = tmp_path / "study.csv"
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(r for r in rows if r["s"] == "1")
    code = main(["estimate", "--data", str(path), "--estimator", "OLS", "--estimand", "TATT"])
    assert code == 2
    assert "target sample" in capsys.readouterr().err


def test_check_identification(capsys):
    assert main(["check-identification", "--random", "5", "--seed", "2"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["max_gap"] <= 1e-10 and len(report["cases"]) == 5


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["estimate"]) == 1
    assert main(["benchmark", "--reps", "0", "--out-table", "x.csv"]) == 1


def test_config_error_exits_2(simulated, capsys):
    code = main(["estimate", "--data", str(simulated / "rep_0000.csv"), "--estimator", "XYZ"])
    assert code == 2 and "config error" in capsys.readouterr().err


def test_rerun_reproduces_outputs(simulated, tmp_path, capsys):
    out = tmp_path / "ipw.json"
    assert main(["estimate", "--data", str(simulated / "rep_0001.csv"), "--estimator", "IPW",
                 "--config", str(bundled("quick.toml")), "--seed", "5", "--out", str(out)]) == 0
    manifest = tmp_path / "ipw.json.manifest.json"
    assert main(["rerun", str(manifest)]) == 0
    out.write_text("{}")  # the rerun rewrites it
    assert main(["rerun", str(manifest)]) == 0
    assert json.loads(out.read_text())["estimator"] == "IPW"


def test_rerun_detects_changed_input(tmp_path, capsys):
    sim = tmp_path / "sim"
    assert main(["simulate", "--reps", "1", "--seed", "1", "--scale", "0.05",
                 "--out", str(sim)]) == 0
    data = sim / "rep_0000.csv"
    out = tmp_path / "ols.json"
    assert main(["estimate", "--data", str(data), "--estimator", "OLS", "--config",
                 str(bundled("quick.toml")), "--out", str(out)]) == 0
    text = data.read_text().splitlines()
    data.write_text("\n".join(text[:-1]) + "\n")
    assert main(["rerun", str(tmp_path / "ols.json.manifest.json")]) == 2


def test_benchmark_jobs_invariance(tmp_path):
    common = ["benchmark", "--reps", "2", "--seed", "7", "--scale", "0.05", "--estimators",
              "OLS,IPW", "--config", str(bundled("quick.toml"))]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(common + ["--jobs", "1", "--out-table", str(a)]) == 0
    assert main(common + ["--jobs", "2", "--out-table", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_estimate_and_subgroup_pipeline(simulated, tmp_path, capsys):
    tau, w = tmp_path / "tau.csv", tmp_path / "w.csv"
    res = tmp_path / "bart.json"
    assert main(["estimate", "--data", str(simulated / "rep_0000.csv"), "--estimator", "BART",
                 "--estimand", "TATT", "--config", str(bundled("quick.toml")), "--seed", "2",
                 "--tau-draws-out", str(tau), "--w-draws-out", str(w), "--out", str(res)]) == 0
    t_mat, t_ids = read_matrix(tau)
    w_mat, w_ids = read_matrix(w)
    assert t_mat.shape == w_mat.shape and t_ids == w_ids
    tree = tmp_path / "tree.json"
    assert main(["subgroup", "--tau-draws", str(tau), "--w-draws", str(w), "--data",
                 str(simulated / "rep_0000.csv"), "--min-leaf", "20", "--out", str(tree)]) == 0
    report = json.loads(tree.read_text())
    assert report["subgroups"]
    for leaf in report["subgroups"]:
        assert 0.0 <= leaf["exceedance"] <= 1.0


def test_console_script_version():
    out = subprocess.run([sys.executable, "-m", "scaleup.cli", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "scaleup" in out.stdout
