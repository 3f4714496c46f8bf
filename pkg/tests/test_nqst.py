"""Tomography: basis amplitudes, likelihood loss, training, dataset files."""

import itertools
from functools import reduce

import numpy as np
import pytest

from nem import nqs
from nem.nqs import TransformerConfig, init_params
from nem.nqst import (
    DatasetFormatError,
    DegenerateModelError,
    MeasurementDataset,
    NqstConfig,
    basis_amplitude,
    basis_amplitudes,
    bases_for_family,
    chemistry_bases,
    load_dataset,
    make_dataset,
    nqst_loss,
    save_dataset,
    schwinger_bases,
    train_nqst,
)
from nem.pauli import all_bitstrings
from nem.simulator import CapabilityError, QuantumState

H1 = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
ROT = {"X": H1, "Y": H1 @ np.diag([1, -1j]), "Z": np.eye(2)}


def model(n, seed=0, scale=1.0):
    p = init_params(TransformerConfig(n), seed)
    p.flat += scale * np.random.default_rng(seed + 50).uniform(-0.5, 0.5, p.flat.size)
    return p


def rotated(psi, basis):
    return reduce(np.kron, [ROT[c] for c in basis]) @ psi


def bases_up_to_k2(n):
    out = []
    for pos in itertools.chain([()], itertools.combinations(range(n), 1), itertools.combinations(range(n), 2)):
        for ops in itertools.product("XY", repeat=len(pos)):
            b = ["Z"] * n
            for q, c in zip(pos, ops):
                b[q] = c
            out.append("".join(b))
    return out


def test_basis_counts():
    assert len(schwinger_bases(8)) == 15
    assert len(chemistry_bases(4)) == 11
    assert len(chemistry_bases(2)) == 4
    assert schwinger_bases(4) == ["ZZZZ", "XXZZ", "ZXXZ", "ZZXX", "YYZZ", "ZYYZ", "ZZYY"]
    with pytest.raises(ValueError):
        bases_for_family("ising", 4)


def test_all_z_is_plain_amplitude():
    p = model(5, seed=1)
    s = np.array([1, 0, 1, 1, 0])
    assert basis_amplitude(p, s, "ZZZZZ") == pytest.approx(np.exp(nqs.log_psi(p, s[None])[0]), abs=1e-14)


def test_xz_dense_oracle():
    p = model(2, seed=2)
    psi = nqs.statevector(p)
    expect = rotated(psi, "XZ")
    got = [basis_amplitude(p, s, "XZ") for s in all_bitstrings(2)]
    assert np.allclose(got, expect, atol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_all_bases_dense_oracle(n):
    p = model(n, seed=n)
    psi = nqs.statevector(p)
    bits = all_bitstrings(n)
    bases = bases_up_to_k2(n)
    for b, basis in enumerate(bases):
        got = basis_amplitudes(p, bases, np.full(2**n, b), bits)
        assert np.allclose(got, rotated(psi, basis), atol=1e-12)


@pytest.mark.parametrize("n", [2, 4, 6])
def test_unitarity(n):
    p = model(n, seed=10 + n, scale=2.0)
    bits = all_bitstrings(n)
    for basis in schwinger_bases(n) + chemistry_bases(n):
        amps = basis_amplitudes(p, [basis], np.zeros(2**n, dtype=int), bits)
        assert abs(np.sum(np.abs(amps) ** 2) - 1) <= 1e-9


def test_k_above_two_rejected():
    p = model(4)
    with pytest.raises(CapabilityError):
        basis_amplitude(p, [0, 0, 0, 0], "XXXZ")
    with pytest.raises(CapabilityError):
        MeasurementDataset(4, ["XYXZ"], [0], [[0, 0, 0, 0]], [1])


# -- loss --------------------------------------------------------------------


def test_multiplicity_equivalence():
    p = model(3, seed=4)
    bases = ["ZZZ", "XXZ"]
    a = MeasurementDataset(3, bases, [0, 0, 1], [[0, 1, 0], [0, 1, 0], [1, 1, 0]], [1, 1, 1])
    b = MeasurementDataset(3, bases, [0, 1], [[0, 1, 0], [1, 1, 0]], [2, 1])
    la, lb = nqst_loss(p, a, with_grad=True), nqst_loss(p, b, with_grad=True)
    assert la.loss == pytest.approx(lb.loss, abs=1e-14)
    assert np.allclose(la.grad, lb.grad, atol=1e-14)


def test_one_qubit_closed_form():
    p = model(1, seed=5, scale=2.0)
    psi = nqs.statevector(p)
    pz = np.abs(psi) ** 2
    px = np.abs(rotated(psi, "X")) ** 2
    py = np.abs(rotated(psi, "Y")) ** 2
    ds = MeasurementDataset(1, ["Z", "X", "Y"], [0, 0, 1, 1, 2], [[0], [1], [0], [1], [1]], [3, 7, 5, 2, 4])
    w = np.array([3, 7, 5, 2, 4]) / 21
    expect = -(w @ np.log([pz[0], pz[1], px[0], px[1], py[1]]))
    assert nqst_loss(p, ds).loss == pytest.approx(expect, abs=1e-12)


def test_loss_gradient_finite_differences():
    p = model(4, seed=6)
    rng = np.random.default_rng(0)
    ds = make_dataset(QuantumState.pure(nqs.statevector(model(4, seed=7))), "schwinger", 40, rng)
    g = nqst_loss(p, ds, with_grad=True).grad
    h = 1e-5
    for c in rng.choice(p.flat.size, 40, replace=False):
        up, dn = p.copy(), p.copy()
        up.flat[c] += h
        dn.flat[c] -= h
        fd = (nqst_loss(up, ds).loss - nqst_loss(dn, ds).loss) / (2 * h)
        assert abs(fd - g[c]) <= 1e-4 * max(abs(fd), abs(g[c]), 1e-6)


def test_loss_approaches_empirical_entropy():
    p = model(3, seed=8, scale=2.0)
    rng = np.random.default_rng(1)
    ds = make_dataset(QuantumState.pure(nqs.statevector(p)), "schwinger", 200_000, rng)
    z = MeasurementDataset(3, ds.bases[:1], ds.basis_idx[ds.basis_idx == 0],
                           ds.bits[ds.basis_idx == 0], ds.counts[ds.basis_idx == 0])
    phat = z.counts / z.n_shots
    entropy = -(phat @ np.log(phat))
    loss = nqst_loss(p, z).loss
    assert entropy <= loss <= entropy + 1e-3


def test_all_clamped_is_degenerate():
    p = init_params(TransformerConfig(4))
    p.block("logit.b")[0] = 800.0
    ds = MeasurementDataset(4, ["ZZZZ"], [0], [[0, 0, 0, 0]], [5])
    with pytest.raises(DegenerateModelError):
        nqst_loss(p, ds)


def test_clamped_records_counted_with_zero_gradient():
    p = init_params(TransformerConfig(4))
    p.block("logit.b")[0] = 800.0
    both = MeasurementDataset(4, ["ZZZZ"], [0, 0], [[0, 0, 0, 0], [1, 1, 1, 1]], [1, 1])
    only = MeasurementDataset(4, ["ZZZZ"], [0], [[1, 1, 1, 1]], [1])
    rb, ro = nqst_loss(p, both, with_grad=True), nqst_loss(p, only, with_grad=True)
    assert rb.clamped == 1
    assert np.isfinite(rb.loss)
    assert np.allclose(rb.grad, 0.5 * ro.grad)


# -- dataset plumbing --------------------------------------------------------


def test_make_dataset_shots_and_determinism():
    psi = QuantumState.pure(nqs.statevector(model(4, seed=3)))
    a = make_dataset(psi, "chemistry", 100, np.random.default_rng(4))
    b = make_dataset(psi, "chemistry", 100, np.random.default_rng(4))
    assert a.n_shots == 11 * 100
    assert np.array_equal(a.bits, b.bits) and np.array_equal(a.counts, b.counts)
    for k in range(len(a.bases)):
        assert a.counts[a.basis_idx == k].sum() == 100


def test_split_is_shot_level():
    psi = QuantumState.pure(nqs.statevector(model(3, seed=2)))
    ds = make_dataset(psi, "schwinger", 500, np.random.default_rng(0))
    tr, va = ds.split(0.1, np.random.default_rng(1))
    assert va.n_shots == round(0.1 * ds.n_shots)
    assert tr.n_shots + va.n_shots == ds.n_shots
    merged = {}
    for part in (tr, va):
        for key in part.records():
            merged[key[:2]] = merged.get(key[:2], 0) + key[2]
    assert merged == {r[:2]: r[2] for r in ds.records()}


def test_dataset_roundtrip(tmp_path):
    psi = QuantumState.pure(nqs.statevector(model(4, seed=9)))
    ds = make_dataset(psi, "schwinger", 64, np.random.default_rng(0), {"seed": 3})
    save_dataset(ds, tmp_path / "d.txt")
    back = load_dataset(tmp_path / "d.txt")
    assert list(back.records()) == list(ds.records())
    assert back.provenance["seed"] == "3"


@pytest.mark.parametrize(
    "body,line",
    [
        ("qubits 2\nZZ 01 3\nZQ 01 1\n", 3),
        ("qubits 2\nZZ 012 3\n", 2),
        ("qubits 2\nZZ 01 0\n", 2),
        ("qubits 2\nZZ 01\n", 2),
        ("ZZ 01 3\n", 1),
    ],
)
def test_dataset_errors_carry_line(tmp_path, body, line):
    (tmp_path / "d.txt").write_text(body)
    with pytest.raises(DatasetFormatError, match=f":{line}:"):
        load_dataset(tmp_path / "d.txt")


# -- training ----------------------------------------------------------------


def test_fit_dominant_outcome():
    ds = MeasurementDataset(4, ["ZZZZ"], [0], [[0, 0, 0, 0]], [512])
    fit = train_nqst(init_params(TransformerConfig(4), 0), ds, NqstConfig(epochs=50, batch_size=128),
                     np.random.default_rng(0))
    lp, _ = nqs.forward(fit.params, np.zeros((1, 4)))
    assert np.exp(lp[0]) >= 0.99


def test_best_checkpoint_not_worse_than_init():
    rng = np.random.default_rng(5)
    target = QuantumState.pure(nqs.statevector(model(4, seed=11)))
    ds = make_dataset(target, "schwinger", 128, rng)
    init = init_params(TransformerConfig(4), 3)
    cfg = NqstConfig(epochs=5, batch_size=64, lr=0.05)
    fit = train_nqst(init, ds, cfg, np.random.default_rng(6))
    _, val = ds.split(cfg.val_fraction, np.random.default_rng(6))
    assert fit.trace[0]["epoch"] == 0 and len(fit.trace) == 6
    assert nqst_loss(fit.params, val).loss <= nqst_loss(init, val).loss
    assert fit.best_val_loss == min(r["val_loss"] for r in fit.trace)


def test_zero_epochs_returns_init():
    ds = MeasurementDataset(2, ["ZZ"], [0], [[0, 1]], [10])
    init = init_params(TransformerConfig(2), 1)
    fit = train_nqst(init, ds, NqstConfig(epochs=0), np.random.default_rng(0))
    assert np.array_equal(fit.params.flat, init.flat) and fit.best_epoch == 0


def test_self_consistency_recovers_generator():
    gen = model(4, seed=0)
    psi = nqs.statevector(gen)
    ds = make_dataset(QuantumState.pure(psi), "schwinger", 4000, np.random.default_rng(1))
    fit = train_nqst(init_params(TransformerConfig(4), 100), ds, NqstConfig(epochs=40), np.random.default_rng(2))
    assert abs(np.vdot(psi, nqs.statevector(fit.params))) ** 2 >= 0.99
