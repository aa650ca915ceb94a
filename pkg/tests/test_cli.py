"""End-to-end command-line tests, all in-process via cli.main()."""

import filecmp
import hashlib
import json

import numpy as np
import pytest

from qchip import cli, models, quantum
from qchip import simulator as sim


def run(*argv):
    return cli.main([str(a) for a in argv])


def gen_small(out, seed=0, mode="power", n_train=20, n_test=8):
    rc = run("gen-data", "--out-dir", out, "--seed", seed, "--mode", mode,
             "--n-train", n_train, "--n-test", n_test)
    assert rc == 0


def train_small(out, model="graybox", iters=20, seed=0):
    rc = run("train", "--out-dir", out, "--model", model,
             "--iterations", iters, "--seed", seed)
    assert rc == 0


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# gen-data


def test_gen_data_line_counts(tmp_path):
    gen_small(tmp_path, n_train=10, n_test=4)
    train_lines = (tmp_path / "train.jsonl").read_text().splitlines()
    test_lines = (tmp_path / "test.jsonl").read_text().splitlines()
    assert len(train_lines) == 11 and len(test_lines) == 5  # header + rows
    header = json.loads(train_lines[0])
    assert header["n"] == 10 and header["mode"] == "power"
    row = json.loads(train_lines[1])
    assert len(row["v"]) == 4 and len(row["y"]) == 9


def test_gen_data_interferometric_width(tmp_path):
    gen_small(tmp_path, mode="interferometric", n_train=3, n_test=2)
    row = json.loads((tmp_path / "train.jsonl").read_text().splitlines()[1])
    assert len(row["y"]) == 18


def test_gen_data_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    gen_small(a, seed=5)
    gen_small(b, seed=5)
    for name in ("train.jsonl", "test.jsonl"):
        assert filecmp.cmp(a / name, b / name, shallow=False), name
    c = tmp_path / "c"
    gen_small(c, seed=6)
    assert _sha(a / "train.jsonl") != _sha(c / "train.jsonl")


# ---------------------------------------------------------------------------
# train / test


def test_train_then_test_writes_artifacts(tmp_path):
    gen_small(tmp_path)
    train_small(tmp_path)
    assert (tmp_path / "model_graybox.json").exists()
    curves = (tmp_path / "curves_graybox.csv").read_text().splitlines()
    assert curves[0] == "iteration,train_mse,test_mse"
    assert len(curves) == 21
    assert float(curves[-1].split(",")[1]) < float(curves[1].split(",")[1])

    assert run("test", "--out-dir", tmp_path, "--model", "graybox") == 0
    doc = json.loads((tmp_path / "eval_graybox.json").read_text())
    assert set(doc) >= {"train_mse", "test_mse", "ratio"}
    assert doc["train_mse"] > 0 and np.isfinite(doc["ratio"])


def test_train_missing_dataset_is_data_error(tmp_path):
    assert run("train", "--out-dir", tmp_path / "nowhere") == 3


def test_test_missing_checkpoint_is_data_error(tmp_path):
    gen_small(tmp_path)
    assert run("test", "--out-dir", tmp_path, "--model", "whitebox") == 3


def test_train_mode_flag_mismatch_rejected(tmp_path):
    gen_small(tmp_path, mode="interferometric")
    rc = run("train", "--out-dir", tmp_path, "--mode", "power",
             "--iterations", 2)
    assert rc == 3


def test_checkpoint_reload_consistency(tmp_path):
    gen_small(tmp_path)
    train_small(tmp_path, model="whitebox", iters=10)
    m = models.load_checkpoint(tmp_path / "model_whitebox.json")
    assert m.kind == "whitebox" and m.is_trained()
    ds = sim.read_dataset(tmp_path / "train.jsonl")
    assert models.evaluate_model(m, ds) > 0


def test_cli_never_mutates_datasets(tmp_path):
    gen_small(tmp_path)
    before = (_sha(tmp_path / "train.jsonl"), _sha(tmp_path / "test.jsonl"))
    train_small(tmp_path, iters=5)
    run("test", "--out-dir", tmp_path)
    run("control", "--out-dir", tmp_path, "--targets", 1,
        "--iterations", 20, "--restarts", 2)
    after = (_sha(tmp_path / "train.jsonl"), _sha(tmp_path / "test.jsonl"))
    assert before == after


# ---------------------------------------------------------------------------
# control


def test_blackbox_unitary_control_is_usage_error(tmp_path):
    # rejected before any files are touched
    assert run("control", "--out-dir", tmp_path, "--model", "blackbox",
               "--kind", "unitary") == 2


def test_control_zero_targets_succeeds(tmp_path):
    gen_small(tmp_path)
    train_small(tmp_path, iters=5)
    assert run("control", "--out-dir", tmp_path, "--targets", 0) == 0
    csv = (tmp_path / "control_graybox_distribution.csv").read_text().splitlines()
    assert len(csv) == 1  # header only
    summary = json.loads(
        (tmp_path / "control_graybox_distribution_summary.json").read_text()
    )
    assert summary["n_targets"] == 0


def test_control_writes_report(tmp_path):
    gen_small(tmp_path)
    train_small(tmp_path, iters=10)
    rc = run("control", "--out-dir", tmp_path, "--targets", 2,
             "--iterations", 30, "--restarts", 2)
    assert rc == 0
    rows = (tmp_path / "control_graybox_distribution.csv").read_text().splitlines()
    assert len(rows) == 3
    for row in rows[1:]:
        cells = row.split(",")
        assert cells[1] == "distribution" and cells[2] == "graybox"
        assert 0.0 <= float(cells[4]) <= 1.0  # achieved fidelity parses
    summary = json.loads(
        (tmp_path / "control_graybox_distribution_summary.json").read_text()
    )
    assert summary["n_targets"] == 2


# ---------------------------------------------------------------------------
# sweep-hamiltonian


def test_graybox_sweep_zero_imaginary_diagonal(tmp_path):
    gen_small(tmp_path)
    train_small(tmp_path, iters=5)
    rc = run("sweep-hamiltonian", "--out-dir", tmp_path, "--points", 7)
    assert rc == 0
    lines = (tmp_path / "sweep_graybox_e1.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert len(lines) == 8 and len(header) == 19
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    assert np.all(np.isfinite(data))
    for name in ("H11_im", "H22_im", "H33_im"):
        assert np.all(data[:, header.index(name)] == 0.0), name


def test_sweep_midpoint_matches_direct_prediction(tmp_path):
    gen_small(tmp_path)
    train_small(tmp_path, iters=5)
    run("sweep-hamiltonian", "--out-dir", tmp_path, "--points", 3)
    lines = (tmp_path / "sweep_graybox_e1.csv").read_text().splitlines()
    mid = [float(x) for x in lines[2].split(",")]
    assert mid[0] == 0.0
    m = models.load_checkpoint(tmp_path / "model_graybox.json")
    H, _, _ = models.graybox_predict(m, np.zeros(4))
    flat = [x for i in range(3) for j in range(3)
            for x in (H[i, j].real, H[i, j].imag)]
    np.testing.assert_allclose(mid[1:], flat, atol=1e-15)


def test_whitebox_sweep_is_affine(tmp_path):
    gen_small(tmp_path)
    train_small(tmp_path, model="whitebox", iters=5)
    run("sweep-hamiltonian", "--out-dir", tmp_path, "--model", "whitebox",
        "--electrode", 2, "--points", 11)
    lines = (tmp_path / "sweep_whitebox_e2.csv").read_text().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    v = data[:, 0]
    for k, name in enumerate(header[1:], start=1):
        col = data[:, k]
        coef = np.polyfit(v, col, 1)
        assert np.max(np.abs(col - np.polyval(coef, v))) < 1e-9, name
    # corners beyond the tridiagonal are identically zero
    for name in ("H13_re", "H13_im", "H31_re", "H31_im"):
        assert np.all(data[:, header.index(name)] == 0.0)


def test_blackbox_sweep_rejected(tmp_path):
    gen_small(tmp_path)
    train_small(tmp_path, model="blackbox", iters=5)
    assert run("sweep-hamiltonian", "--out-dir", tmp_path,
               "--model", "blackbox") == 2


# ---------------------------------------------------------------------------
# report + full-pipeline determinism


def _pipeline(out, seed):
    gen_small(out, seed=seed)
    train_small(out, iters=15, seed=seed)
    assert run("test", "--out-dir", out, "--seed", seed) == 0
    assert run("control", "--out-dir", out, "--targets", 2,
               "--iterations", 25, "--restarts", 2, "--seed", seed) == 0
    assert run("sweep-hamiltonian", "--out-dir", out, "--points", 5,
               "--seed", seed) == 0
    assert run("report", "--out-dir", out, "--seed", seed) == 0


def test_full_pipeline_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    _pipeline(a, seed=3)
    _pipeline(b, seed=3)
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert filecmp.cmp(a / name, b / name, shallow=False), name


def test_report_aggregates_artifacts(tmp_path):
    _pipeline(tmp_path, seed=1)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["datasets"]["train"]["n"] == 20
    assert "graybox" in doc["evaluations"]
    assert "graybox_distribution" in doc["control"]
    assert "sweep_graybox_e1.csv" in doc["sweeps"]


def test_report_on_empty_dir_succeeds(tmp_path):
    assert run("report", "--out-dir", tmp_path) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["datasets"] == {} and doc["evaluations"] == {}
