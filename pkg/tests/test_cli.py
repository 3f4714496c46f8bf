"""Subcommands, exit codes and file outputs of the ``nem`` command."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from nem import nqs, nqst
from nem.cli import main
from nem.pauli import SchwingerParams, build_schwinger

DATA = Path(__file__).parent / "data"
FAST = ["--override", "problem.n_sites=4", "--override", "vqe.iterations=5", "--override", "nqst.epochs=2",
        "--override", "nqst.shots_per_basis=32", "--override", "vmc.iterations=8", "--override", "vmc.batch=32"]


def test_exact(tmp_path, capsys):
    assert main(["exact", "--out", str(tmp_path), "--override", "problem.n_sites=2", "--override",
                 "problem.mass=0"]) == 0
    out = json.loads((tmp_path / "exact.json").read_text())
    w = np.linalg.eigvalsh(build_schwinger(SchwingerParams(2, 0.0)).to_dense())
    assert out["energy"] == pytest.approx(w[0], abs=1e-9)
    assert json.loads(capsys.readouterr().out) == out


def test_config_errors_exit_2(tmp_path):
    assert main(["exact", "--out", str(tmp_path), "--override", "vmc.nope=1"]) == 2
    assert main(["exact", "--config", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "c.json").write_text("{not json")
    assert main(["exact", "--config", str(tmp_path / "c.json")]) == 2
    assert main(["pipeline", "--out", str(tmp_path), "--override", "problem.kind=hamiltonian-file",
                 "--override", f"problem.path={tmp_path / 'nope.ham'}"]) == 2
    assert not (tmp_path / "report.json").exists()


def test_bad_dataset_exit_2(tmp_path):
    (tmp_path / "d.txt").write_text("qubits 4\nZZZZ 0101 x\n")
    assert main(["nqst", "--dataset", str(tmp_path / "d.txt"), "--out", str(tmp_path)] + FAST) == 2


def test_numerical_failure_exit_3(tmp_path):
    with np.errstate(all="ignore"):
        rc = main(["pipeline", "--out", str(tmp_path), *FAST, "--override", "vmc.lr=1e200"])
    assert rc == 3
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["failure"]["stage"] == "vmc" and "nqst" in rep["stages"]


def test_stagewise_commands_chain(tmp_path):
    assert main(["vqe", "--out", str(tmp_path), *FAST]) == 0
    assert (tmp_path / "vqe_state.npy").is_file() and (tmp_path / "vqe_trace.csv").is_file()
    assert main(["sample", "--state", str(tmp_path / "vqe_state.npy"), "--out", str(tmp_path), *FAST]) == 0
    ds = nqst.load_dataset(tmp_path / "dataset.txt")
    assert ds.n_shots == 7 * 32
    assert main(["nqst", "--dataset", str(tmp_path / "dataset.txt"), "--out", str(tmp_path), *FAST]) == 0
    assert main(["vmc", "--checkpoint", str(tmp_path / "nqst.ckpt"), "--out", str(tmp_path), *FAST]) == 0
    p = nqs.load_checkpoint(tmp_path / "vmc.ckpt")
    assert p.config.n_qubits == 4
    assert json.loads((tmp_path / "vmc.json").read_text())["metrics"]["infidelity"] <= 1


def test_sample_matches_pipeline_dataset_size(tmp_path):
    # without --state the VQE stage is rerun with the same seed stream
    assert main(["sample", "--out", str(tmp_path / "a"), "--seed", "4", *FAST]) == 0
    assert main(["vqe", "--out", str(tmp_path / "b"), "--seed", "4", *FAST]) == 0
    assert main(["sample", "--state", str(tmp_path / "b" / "vqe_state.npy"), "--out", str(tmp_path / "c"),
                 "--seed", "4", *FAST]) == 0
    assert (tmp_path / "a" / "dataset.txt").read_text() == (tmp_path / "c" / "dataset.txt").read_text()


def test_checkpoint_size_mismatch_exit_2(tmp_path):
    nqs.save_checkpoint(nqs.init_params(nqs.TransformerConfig(2)), tmp_path / "m.ckpt")
    assert main(["vmc", "--checkpoint", str(tmp_path / "m.ckpt"), "--out", str(tmp_path), *FAST]) == 2


def test_pipeline_and_report(tmp_path, capsys):
    for seed in (0, 1):
        assert main(["pipeline", "--seed", str(seed), "--out", str(tmp_path / f"r{seed}"), *FAST]) == 0
    capsys.readouterr()
    assert main(["report", str(tmp_path / "r0"), str(tmp_path / "r1"), "--out", str(tmp_path / "agg")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "agg" / "aggregate.csv")))
    assert {r["n"] for r in rows} == {"2"}
    assert "median=" in capsys.readouterr().out


def test_report_missing_run_exit_2(tmp_path):
    assert main(["report", str(tmp_path / "nothing")]) == 2


def test_sweep_range_and_standalone(tmp_path):
    rc = main(["sweep", "--seeds", "0:2", "--standalone", "--out", str(tmp_path), *FAST,
               "--override", "problem.n_sites=2"])
    assert rc == 0
    assert sorted(p.name for p in tmp_path.iterdir() if p.is_dir()) == \
        ["nem_seed0", "nem_seed1", "standalone_seed0", "standalone_seed1"]
    assert (tmp_path / "paired.csv").read_text().count("\n") == 3


def test_bad_seed_rejected():
    with pytest.raises(SystemExit):
        main(["exact", "--seed", "-1"])
