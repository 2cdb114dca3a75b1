"""Command-line workflows end to end: train, eval, sweep, report, and the
error-to-exit-code mapping. Everything runs in-process through main()."""

import csv
import json

import numpy as np
import pytest

import quicknet as qn
from quicknet.checkpoint import file_digest
from quicknet.cli import EPOCH_COLUMNS, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """IDX pair plus an architecture JSON, small enough for fast CLI runs."""
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(0)
    n_per, classes, side = 40, 3, 4
    labels = np.repeat(np.arange(classes), n_per).astype(np.uint8)
    # one bright quadrant per class plus noise: trivially learnable u8 images
    images = rng.integers(0, 60, (n_per * classes, side, side), dtype=np.uint8)
    for c in range(classes):
        rows = labels == c
        images[np.ix_(rows, [c], [c])] = 255
    order = rng.permutation(labels.size)
    images, labels = images[order], labels[order]

    qn.save_idx(root / "imgs.idx", images)
    qn.save_idx(root / "labels.idx", labels)
    arch = qn.mlp_arch(input_dim=side * side, width=12, blocks=2, classes=classes)
    (root / "arch.json").write_text(json.dumps(arch))
    return root


def train_args(ws, out, extra=()):
    return [
        "train",
        "--arch", str(ws / "arch.json"),
        "--data-images", str(ws / "imgs.idx"),
        "--data-labels", str(ws / "labels.idx"),
        "--test-images", str(ws / "imgs.idx"),
        "--test-labels", str(ws / "labels.idx"),
        "--out-dir", str(out),
        "--seed", "7",
        "--max-epochs", "12",
        "--batch-size", "16",
        "--lr", "0.01",
        *extra,
    ]


@pytest.fixture(scope="module")
def run_dir(workspace, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(train_args(workspace, out)) == 0
    return out


def test_train_writes_run_artifacts(run_dir):
    for name in ("checkpoint.qnet", "manifest.json", "epochs.csv", "timing.json"):
        assert (run_dir / name).exists(), name


def test_manifest_contents(run_dir):
    m = json.loads((run_dir / "manifest.json").read_text())
    assert m["mode"] == "quicknet"
    assert m["config"]["seed"] == 7
    assert m["arch_hash"]
    assert m["blocks_trained"] >= 1
    assert m["checkpoint"]["sha256"] == file_digest(run_dir / "checkpoint.qnet")
    assert m["training_flops"] > 0
    assert "records" in m and len(m["records"]) == m["blocks_trained"]
    # wall-clock timing lives in the sidecar, never in the manifest
    assert "started_unix" not in json.dumps(m)
    t = json.loads((run_dir / "timing.json").read_text())
    assert t["seconds"] >= 0


def test_epochs_csv_schema(run_dir):
    with open(run_dir / "epochs.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    assert list(rows[0]) == EPOCH_COLUMNS
    cums = [float(r["cum_flops"]) for r in rows]
    assert cums == sorted(cums)
    assert {r["phase"] for r in rows} <= {"block", "commitment"}


def test_same_seed_runs_are_byte_identical(workspace, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(train_args(workspace, a)) == 0
    assert main(train_args(workspace, b)) == 0
    for name in ("checkpoint.qnet", "manifest.json", "epochs.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    # timing differs by nature; it must not contaminate the compared files
    assert (a / "timing.json").exists()


def test_eval_reports_metrics(run_dir, workspace, capsys, tmp_path):
    out_json = tmp_path / "metrics.json"
    code = main([
        "eval",
        "--run", str(run_dir),
        "--data-images", str(workspace / "imgs.idx"),
        "--data-labels", str(workspace / "labels.idx"),
        "--out", str(out_json),
    ])
    assert code == 0
    printed = json.loads(capsys.readouterr().out)
    assert 0.0 <= printed["accuracy"] <= 1.0
    assert printed["mean_inference_flops"] > 0
    assert json.loads(out_json.read_text()) == printed


def test_eval_threshold_defaults_to_training_threshold(run_dir, workspace, capsys):
    main([
        "eval",
        "--run", str(run_dir),
        "--data-images", str(workspace / "imgs.idx"),
        "--data-labels", str(workspace / "labels.idx"),
    ])
    printed = json.loads(capsys.readouterr().out)
    assert printed["threshold"] == 0.9


def test_sweep_writes_mode_threshold_grid(run_dir, workspace, tmp_path):
    out_csv = tmp_path / "sweep.csv"
    code = main([
        "sweep",
        "--run", str(run_dir),
        "--data-images", str(workspace / "imgs.idx"),
        "--data-labels", str(workspace / "labels.idx"),
        "--thresholds", "0.5,0.9",
        "--out", str(out_csv),
    ])
    assert code == 0
    with open(out_csv) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert {r["mode"] for r in rows} == {"confidence", "confidence+commitment"}
    assert {float(r["threshold"]) for r in rows} == {0.5, 0.9}


def test_report_merges_runs(run_dir, workspace, tmp_path):
    e2e_dir = tmp_path / "e2e"
    assert main(train_args(workspace, e2e_dir, extra=["--mode", "end2end"])) == 0
    out = tmp_path / "report"
    code = main([
        "report",
        "--manifest", str(run_dir / "manifest.json"), str(e2e_dir / "manifest.json"),
        "--out-dir", str(out),
    ])
    assert code == 0
    for name in ("epochs_per_block.csv", "pool_sizes.csv", "class_composition.csv",
                 "cost_vs_accuracy.csv"):
        assert (out / name).exists(), name
    with open(out / "cost_vs_accuracy.csv") as fh:
        rows = list(csv.DictReader(fh))
    series = {r["series"] for r in rows}
    assert any(s.startswith("quicknet") for s in series)
    assert any(s.startswith("end2end") for s in series)


def test_missing_data_file_maps_to_exit_2(workspace, tmp_path, capsys):
    code = main(train_args(workspace, tmp_path / "x", extra=[])[:-10] + [
        "--data-images", str(workspace / "nope.idx"),
        "--data-labels", str(workspace / "labels.idx"),
        "--out-dir", str(tmp_path / "x"),
    ])
    assert code == 2
    assert capsys.readouterr().err.startswith("error: data:")


def test_bad_arch_json_maps_to_exit_3(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code = main([
        "train",
        "--arch", str(bad),
        "--data-images", str(workspace / "imgs.idx"),
        "--data-labels", str(workspace / "labels.idx"),
        "--out-dir", str(tmp_path / "y"),
    ])
    assert code == 3
    assert capsys.readouterr().err.startswith("error: config:")


def test_sweep_on_end2end_run_maps_to_exit_3(workspace, tmp_path, capsys):
    e2e_dir = tmp_path / "e2e2"
    assert main(train_args(workspace, e2e_dir, extra=["--mode", "end2end"])) == 0
    code = main([
        "sweep",
        "--run", str(e2e_dir),
        "--data-images", str(workspace / "imgs.idx"),
        "--data-labels", str(workspace / "labels.idx"),
        "--thresholds", "0.5",
    ])
    assert code == 3
    assert "error: config:" in capsys.readouterr().err


def test_report_provenance_mismatch_maps_to_exit_2(run_dir, workspace, tmp_path, capsys):
    other_ws = tmp_path / "ws2"
    other_ws.mkdir()
    rng = np.random.default_rng(9)
    qn.save_idx(other_ws / "imgs.idx", rng.integers(0, 255, (12, 4, 4), dtype=np.uint8))
    qn.save_idx(other_ws / "labels.idx", np.array([0, 1, 2] * 4, dtype=np.uint8))
    (other_ws / "arch.json").write_text((workspace / "arch.json").read_text())
    other_run = tmp_path / "other_run"
    assert main(train_args(other_ws, other_run)) == 0
    code = main([
        "report",
        "--manifest", str(run_dir / "manifest.json"), str(other_run / "manifest.json"),
        "--out-dir", str(tmp_path / "r2"),
    ])
    assert code == 2
    assert "error: data:" in capsys.readouterr().err
