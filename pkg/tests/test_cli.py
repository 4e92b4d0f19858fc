import csv
import json
import subprocess
import sys
import warnings

import pytest

from pgkd import cli
from pgkd.data import load_checkpoint, read_jsonl

SMALL = ["--k", "3", "--nodes-per-block", "30", "--p-intra", "0.15", "--p-inter", "0.01", "--feature-dim", "8",
         "--separation", "1.5"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert cli.main(["gen-sbm", "--out", str(out), "--seed", "1", *SMALL]) == 0
    return out / "manifest.json"


@pytest.fixture
def config(tmp_path, dataset):
    doc = {"dataset": str(dataset), "seeds": [0, 1],
           "split": {"train_per_class": 5},
           "train": {"teacher": "gcn", "teacher_hidden": 16, "student_hidden": 16, "max_epochs": 15,
                     "patience": 5}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def _only_dir(root):
    [h] = [p for p in root.iterdir() if p.is_dir()]
    return h


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.suffix in {".jsonl", ".csv", ".ckpt", ".json"} and p.name != "timing.json"
            and p.name != "grid_timing.csv"}


def test_gen_sbm_writes_manifest_and_config(dataset):
    doc = json.loads(dataset.read_text())
    assert (doc["n"], doc["k"]) == (90, 3)
    assert json.loads((dataset.parent / "sbm_config.json").read_text())["seed"] == 1


def test_distill_layout_and_provenance(tmp_path, config):
    out = tmp_path / "runs"
    assert cli.main(["distill", "--config", str(config), "--out-dir", str(out)]) == 0
    run = _only_dir(out) / "0"
    names = {p.name for p in run.iterdir()}
    assert {"config.json", "teacher_metrics.jsonl", "teacher.ckpt", "student_metrics.jsonl", "student.ckpt",
            "timing.json"} <= names
    h = json.loads((run / "config.json").read_text())["config_hash"]
    assert h == _only_dir(out).name
    recs = read_jsonl(run / "student_metrics.jsonl")
    assert all(r["config_hash"] == h for r in recs)
    assert all("wall_ms" not in r for r in recs)
    _, meta = load_checkpoint(run / "student.ckpt")
    assert meta["config_hash"] == h and meta["seed"] == 0 and meta["method"] == "pgkd"


def test_evaluate_and_export(tmp_path, config, capsys):
    out = tmp_path / "runs"
    assert cli.main(["train-teacher", "--config", str(config), "--out-dir", str(out)]) == 0
    ckpt = _only_dir(out) / "0" / "teacher.ckpt"
    capsys.readouterr()
    assert cli.main(["evaluate", "--config", str(config), "--checkpoint", str(ckpt), "--nodes", "val"]) == 0
    assert 0.0 <= json.loads(capsys.readouterr().out)["accuracy"] <= 1.0
    emb = tmp_path / "emb.csv"
    assert cli.main(["export-embeddings", "--config", str(config), "--checkpoint", str(ckpt),
                     "--out", str(emb)]) == 0
    rows = emb.read_text().splitlines()
    assert len(rows) == 1 + 90 and len(rows[0].split(",")) == 16 + 2


def test_distill_reuses_teacher_checkpoint(tmp_path, config):
    out = tmp_path / "runs"
    assert cli.main(["train-teacher", "--config", str(config), "--out-dir", str(out)]) == 0
    run = _only_dir(out) / "0"
    first = (run / "teacher.ckpt").read_bytes()
    assert cli.main(["distill", "--config", str(config), "--out-dir", str(out),
                     "--teacher-checkpoint", str(run / "teacher.ckpt")]) == 0
    assert (run / "teacher.ckpt").read_bytes() == first


def test_glnn_flag_equals_zero_lambdas(tmp_path, config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["distill", "--config", str(config), "--out-dir", str(a), "--glnn"]) == 0
    assert cli.main(["distill", "--config", str(config), "--out-dir", str(b), "--lambda1", "0",
                     "--lambda2", "0"]) == 0
    assert _only_dir(a).name == _only_dir(b).name
    fa, fb = _files(a), _files(b)
    conf = [k for k in fa if k.endswith("config.json")]
    strip = lambda blob: {k: v for k, v in json.loads(blob).items() if k != "output_dir"}  # noqa: E731
    assert [strip(fa.pop(k)) for k in conf] == [strip(fb.pop(k)) for k in conf]
    assert fa == fb
    _, meta = load_checkpoint(_only_dir(a) / "0" / "student.ckpt")
    assert meta["method"] == "glnn"


def test_grid_rows_and_rerun_is_byte_identical(tmp_path, config):
    args = ["grid", "--config", str(config), "--out-dir", str(tmp_path / "g")]
    assert cli.main(args) == 0
    d = _only_dir(tmp_path / "g") / "grid-seeds-0-1"
    first = _files(tmp_path / "g")
    text = (d / "grid_runs.csv").read_text()
    assert text.startswith("# config_hash=")
    rows = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
    assert len(rows) == 6 * 2
    summary = [line for line in (d / "grid_summary.csv").read_text().splitlines() if not line.startswith("#")]
    assert len(summary) == 1 + 6
    assert (d / "grid.png").exists()
    assert cli.main(args) == 0
    assert _files(tmp_path / "g") == first


def test_output_dir_from_environment(tmp_path, config, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.main(["split", "--config", str(config)]) == 0
    assert (_only_dir(tmp_path / "env") / "0" / "split.json").exists()


def test_analyze_and_sweeps(tmp_path, config):
    out = str(tmp_path / "r")
    base = ["--config", str(config), "--out-dir", out, "--seeds", "0"]
    assert cli.main(["analyze", "dist", *base]) == 0
    assert cli.main(["analyze", "spearman", *base]) == 0
    run = _only_dir(tmp_path / "r") / "0"
    assert {"connected_distance.csv", "spearman.csv", "spearman_pairs.csv", "spearman.png"} <= {
        p.name for p in run.iterdir()}
    cfg = json.loads(config.read_text())
    cfg["sweep"] = {"alphas": [0.0, 1.0], "ratios": [0.2], "capacity": [[2, 8]]}
    config.write_text(json.dumps(cfg))
    for what in ("noise", "ratio", "capacity"):
        assert cli.main(["sweep", what, *base]) == 0
    found = {p.name for p in (tmp_path / "r").rglob("*.csv")}
    assert {"noise.csv", "ratio.csv", "capacity.csv"} <= found
    noise = next((tmp_path / "r").rglob("noise.csv"))
    assert "noise=gaussian_column_std" in noise.read_text().splitlines()[0]


def test_unknown_config_key_names_path(tmp_path, dataset, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"dataset": str(dataset), "train": {"lamda1": 0.1}}))
    assert cli.main(["distill", "--config", str(path), "--out-dir", str(tmp_path)]) == 1
    assert "train.lamda1" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["distill", "--bogus"],
    ["distill", "--dataset", "/nonexistent/manifest.json"],
    ["distill", "--lambda1", "-1"],
    ["gen-sbm", "--out", "x", "--p-intra", "2"],
])
def test_invalid_input_exit_code_one(tmp_path, argv):
    assert cli.main([*argv, *(["--out-dir", str(tmp_path)] if argv[0] != "gen-sbm" else [])]) == 1


def test_runtime_failure_exit_code_two(tmp_path, dataset):
    path = tmp_path / "div.json"
    path.write_text(json.dumps({"dataset": str(dataset), "train": {"lr_teacher": 1e200, "max_epochs": 10}}))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        assert cli.main(["train-teacher", "--config", str(path), "--out-dir", str(tmp_path)]) == 2


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "pgkd.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("gen-sbm", "split", "train-teacher", "distill", "evaluate", "grid", "analyze", "sweep",
                "export-embeddings"):
        assert sub in out.stdout
