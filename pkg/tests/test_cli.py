import io
import json

import pandas as pd
import pytest
import yaml

from cli import main

RUN_CONFIG = """\
kind: federation
dataset: {num_classes: 3, input_dim: 4, per_class_count: 20, noise_sigma: 0.5}
arch: {kind: logistic, input_dim: 4, num_classes: 3}
rounds: 2
partition: {num_clients: 1}
"""

SCENARIO = """\
kind: scenario
name: toy
datasets:
  - {{num_classes: 3, input_dim: 4, per_class_count: 30, noise_sigma: 0.5}}
alphas: [10.0]
epochs: [1]
seeds: {seeds}
fedrandom_runs: 2
rounds: 2
num_clients: 3
min_shard: 5
batch_size: 16
"""


# ============================================================
# partition
# ============================================================
def test_partition_near_uniform(tmp_path, capsys):
    out = tmp_path / "part.yaml"
    assert main(["partition", "--clients", "5", "--alpha", "1e9", "--seed", "3", "--out", str(out)]) == 0
    doc = yaml.safe_load(out.read_text())
    assert doc["kind"] == "partition" and doc["records"] == 1000
    assert max(doc["sizes"]) - min(doc["sizes"]) <= 4
    assert sum(doc["sizes"]) == 1000
    printed = pd.read_csv(io.StringIO(capsys.readouterr().out))
    assert printed["ground_truth"].sum() == pytest.approx(1.0, abs=1e-12)

    first = out.read_bytes()
    assert main(["partition", "--clients", "5", "--alpha", "1e9", "--seed", "3", "--out", str(out)]) == 0
    assert out.read_bytes() == first


def test_partition_requires_out():
    with pytest.raises(SystemExit) as exc:
        main(["partition", "--clients", "5"])
    assert exc.value.code == 2


def test_partition_capacity_error(tmp_path, capsys):
    rc = main(["partition", "--per-class", "2", "--clients", "5", "--min-shard", "5", "--out", str(tmp_path / "p.yaml")])
    assert rc == 1
    assert "cannot fill" in capsys.readouterr().err


# ============================================================
# run
# ============================================================
def test_run_single_client(tmp_path):
    cfg = tmp_path / "fed.yaml"
    cfg.write_text(RUN_CONFIG)
    out_a, out_b = tmp_path / "a.yaml", tmp_path / "b.yaml"
    assert main(["run", str(cfg), "--out", str(out_a)]) == 0
    assert main(["run", str(cfg), "--out", str(out_b)]) == 0
    rec = yaml.safe_load(out_a.read_text())
    assert rec["schema_version"] == 1
    assert rec["contributions"] == [1.0]
    assert len(rec["rounds"]) == 2
    assert out_a.read_bytes() == out_b.read_bytes()


def test_run_rejects_malformed_config(tmp_path, capsys):
    cfg = tmp_path / "fed.yaml"
    cfg.write_text(RUN_CONFIG.replace("rounds: 2", "rounds: two"))
    assert main(["run", str(cfg), "--out", str(tmp_path / "r.yaml")]) == 1
    assert "rounds" in capsys.readouterr().err
    assert not (tmp_path / "r.yaml").exists()


# ============================================================
# experiment + report
# ============================================================
def _experiment(tmp_path, name, seeds, workers):
    sc = tmp_path / f"{name}.yaml"
    sc.write_text(SCENARIO.format(seeds=seeds))
    out = tmp_path / name
    assert main(["--quiet", "experiment", str(sc), "--out", str(out), "--workers", str(workers)]) == 0
    return out


def test_experiment_layout_and_worker_invariance(tmp_path):
    serial = _experiment(tmp_path, "serial", "[0]", 1)
    parallel = _experiment(tmp_path, "parallel", "[0]", 8)
    rows = pd.read_csv(serial / "report.csv")
    assert rows["method"].tolist() == ["MSM", "FR"]
    assert (serial / "report.csv").read_bytes() == (parallel / "report.csv").read_bytes()
    assert len(list((serial / "records").rglob("*.yaml"))) == 8 + 2
    for name in ("summary.yaml", "scenario.yaml", "samples.csv", "table_avg_std.csv", "table_l2.csv", "table_linf.csv"):
        assert (serial / name).exists()


def test_summary_matches_csv_recount(tmp_path):
    out = _experiment(tmp_path, "grid", "[0, 1, 2]", 1)
    rows = pd.read_csv(out / "report.csv")
    summary = yaml.safe_load((out / "summary.yaml").read_text())
    assert summary["cells"] == 3
    msm = rows[rows["method"] == "MSM"].set_index("scenario_id")
    fr = rows[rows["method"] == "FR"].set_index("scenario_id")
    for crit in ("avg_std", "l2", "linf"):
        wins = int((fr[crit] < msm.loc[fr.index, crit]).sum())
        losses = int((fr[crit] > msm.loc[fr.index, crit]).sum())
        assert summary["criteria"][crit]["wins"] == wins
        assert summary["criteria"][crit]["losses"] == losses


def test_report_csv_and_json(tmp_path, capsys):
    out = _experiment(tmp_path, "rep", "[0]", 1)
    capsys.readouterr()
    assert main(["report", "--in", str(out), "--format", "json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert len(payload["metrics"]) == 2
    trace = [t for t in payload["traces"] if t["method"] == "MSM" and t["run"] == 0]
    assert len(trace) == 2

    report_csv = tmp_path / "report.csv"
    assert main(["report", "--in", str(out), "--format", "csv", "--out", str(report_csv)]) == 0
    metrics = pd.read_csv(io.StringIO(report_csv.read_text().split("\n\n")[0] + "\n"))
    assert metrics["l2"].tolist() == [m["l2"] for m in payload["metrics"]]


def test_report_empty_directory(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["report", "--in", str(tmp_path / "empty")]) == 1
    assert "no records" in capsys.readouterr().err


def test_report_flags_corrupt_records(tmp_path, capsys):
    out = _experiment(tmp_path, "bad", "[0]", 1)
    victim = next((out / "records").rglob("FR-0.yaml"))
    victim.write_text("schema_version: 1\nkind: run_record\ncontributions: [oops\n")
    capsys.readouterr()
    assert main(["report", "--in", str(out)]) == 1
    assert "FR-0.yaml" in capsys.readouterr().err


def test_report_on_standalone_run_records(tmp_path, capsys):
    cfg = tmp_path / "fed.yaml"
    cfg.write_text(RUN_CONFIG)
    runs = tmp_path / "runs"
    assert main(["run", str(cfg), "--out", str(runs / "a.yaml")]) == 0
    capsys.readouterr()
    assert main(["report", "--in", str(runs), "--format", "json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    (row,) = payload["metrics"]
    assert row["scenario_id"] == "single" and row["method"] == "FedAvg"
    assert row["sample_count"] == 1 and row["avg_std"] is None
    assert len(payload["traces"]) == 2


def test_report_flags_record_with_partial_cell(tmp_path, capsys):
    cfg = tmp_path / "fed.yaml"
    cfg.write_text(RUN_CONFIG)
    out = tmp_path / "runs" / "a.yaml"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    rec = yaml.safe_load(out.read_text())
    rec["cell"] = {"scenario_id": "single", "method": "FedAvg", "run": 0}
    out.write_text(yaml.safe_dump(rec))
    capsys.readouterr()
    assert main(["report", "--in", str(out.parent)]) == 1
    assert "cell lacks dataset" in capsys.readouterr().err
