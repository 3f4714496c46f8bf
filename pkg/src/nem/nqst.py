"""Tomography: fit the Transformer wavefunction to Pauli-basis measurement data.

A record is (basis, outcome bitstring, count). The model probability of an
outcome in basis B is |sum_t <s,B|t> <t|psi>|^2 where t runs over the 2^K
computational strings that differ from s only on the K non-Z positions of B.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from . import nqs
from .nqs import NqsParameters
from .pauli import bits_to_index, index_to_bits
from .simulator import CapabilityError, QuantumState, sample_in_basis

log = logging.getLogger(__name__)

K_MAX = 2
LOG_CLAMP = np.log(1e-300)
_S2 = 1.0 / np.sqrt(2.0)


class DatasetFormatError(ValueError):
    pass


class DegenerateModelError(FloatingPointError):
    """Every record in a batch has (numerically) zero model probability."""


class NqstDiverged(FloatingPointError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def non_z_positions(basis: str) -> list[int]:
    return [j for j, c in enumerate(basis) if c != "Z"]


def _check_basis(basis: str, n: int, k_max: int = K_MAX) -> str:
    if len(basis) != n or any(c not in "XYZ" for c in basis):
        raise ValueError(f"basis {basis!r} is not a length-{n} string over XYZ")
    k = len(non_z_positions(basis))
    if k > k_max:
        raise CapabilityError(f"basis {basis} has {k} non-Z positions; K_max is {k_max}")
    return basis


@dataclass
class MeasurementDataset:
    n_qubits: int
    bases: list[str]
    basis_idx: np.ndarray  # (R,) index into bases
    bits: np.ndarray  # (R, N) int8
    counts: np.ndarray  # (R,) positive int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.basis_idx = np.asarray(self.basis_idx, dtype=np.int64)
        self.bits = np.asarray(self.bits, dtype=np.int8).reshape(-1, self.n_qubits)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        for b in self.bases:
            _check_basis(b, self.n_qubits)
        if not (self.basis_idx.shape[0] == self.bits.shape[0] == self.counts.shape[0]):
            raise ValueError("record arrays have inconsistent lengths")
        if np.any(self.counts <= 0):
            raise ValueError("record multiplicities must be positive")

    def __len__(self):
        return int(self.counts.shape[0])

    @property
    def n_shots(self) -> int:
        return int(self.counts.sum())

    def records(self):
        for b, s, c in zip(self.basis_idx, self.bits, self.counts):
            yield self.bases[b], "".join(map(str, s)), int(c)

    def subset(self, shot_counts: np.ndarray) -> "MeasurementDataset":
        """Same records with new multiplicities; zero-count records are dropped."""
        keep = shot_counts > 0
        return MeasurementDataset(
            self.n_qubits, self.bases, self.basis_idx[keep], self.bits[keep], shot_counts[keep], dict(self.provenance)
        )

    def split(self, val_fraction: float, rng: np.random.Generator):
        """Shot-level random split into (train, validation)."""
        owner = np.repeat(np.arange(len(self)), self.counts)
        owner = rng.permutation(owner)
        n_val = int(round(val_fraction * owner.size))
        val = np.bincount(owner[:n_val], minlength=len(self))
        train = np.bincount(owner[n_val:], minlength=len(self))
        return self.subset(train), self.subset(val)


def schwinger_bases(n: int) -> list[str]:
    out = ["Z" * n]
    for pair in ("XX", "YY"):
        for j in range(n - 1):
            out.append("Z" * j + pair + "Z" * (n - j - 2))
    return out


def chemistry_bases(n: int) -> list[str]:
    out = ["Z" * n]
    out += ["Z" * j + "X" + "Z" * (n - j - 1) for j in range(n)]
    for i, j in combinations(range(n), 2):
        b = ["Z"] * n
        b[i] = b[j] = "X"
        out.append("".join(b))
    return out


def bases_for_family(family: str, n: int) -> list[str]:
    if family == "schwinger":
        return schwinger_bases(n)
    if family == "chemistry":
        return chemistry_bases(n)
    raise ValueError(f"unknown measurement family {family!r}")


def make_dataset(state: QuantumState, family: str, shots_per_basis: int, rng: np.random.Generator,
                 provenance: dict | None = None) -> MeasurementDataset:
    n = state.n_qubits
    bases = bases_for_family(family, n)
    idx, bits, counts = [], [], []
    for b, basis in enumerate(bases):
        shots = sample_in_basis(state, basis, shots_per_basis, rng)
        uniq, cnt = np.unique(bits_to_index(shots), return_counts=True)
        idx.append(np.full(uniq.size, b))
        bits.append(index_to_bits(uniq, n))
        counts.append(cnt)
    prov = {"family": family, "shots_per_basis": shots_per_basis}
    prov.update(provenance or {})
    return MeasurementDataset(n, bases, np.concatenate(idx), np.concatenate(bits), np.concatenate(counts), prov)


# --------------------------------------------------------------------------
# dataset file: "qubits N" header, then "<basis> <bitstring> <count>" lines


def save_dataset(ds: MeasurementDataset, path) -> None:
    lines = [f"qubits {ds.n_qubits}"]
    for k, v in sorted(ds.provenance.items()):
        lines.append(f"# {k}={v}")
    for basis, s, c in ds.records():
        lines.append(f"{basis} {s} {c}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> MeasurementDataset:
    n = None
    bases: dict[str, int] = {}
    idx, bits, counts, prov = [], [], [], {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if line.startswith("#"):
            if "=" in line:
                k, v = line[1:].strip().split("=", 1)
                prov[k.strip()] = v.strip()
            continue
        if not line:
            continue
        parts = line.split()
        if n is None:
            if len(parts) != 2 or parts[0] != "qubits" or not parts[1].isdigit():
                raise DatasetFormatError(f"{path}:{lineno}: expected 'qubits <N>' header")
            n = int(parts[1])
            continue
        if len(parts) != 3:
            raise DatasetFormatError(f"{path}:{lineno}: expected '<basis> <bitstring> <count>'")
        basis, s, c = parts
        if len(basis) != n or any(ch not in "XYZ" for ch in basis):
            raise DatasetFormatError(f"{path}:{lineno}: bad basis {basis!r}")
        if len(s) != n or any(ch not in "01" for ch in s):
            raise DatasetFormatError(f"{path}:{lineno}: bad bitstring {s!r}")
        if not c.isdigit() or int(c) == 0:
            raise DatasetFormatError(f"{path}:{lineno}: count must be a positive integer")
        idx.append(bases.setdefault(basis, len(bases)))
        bits.append([int(ch) for ch in s])
        counts.append(int(c))
    if n is None:
        raise DatasetFormatError(f"{path}: empty dataset file")
    return MeasurementDataset(n, list(bases), idx, np.array(bits, dtype=np.int8).reshape(-1, n), counts, prov)


# --------------------------------------------------------------------------
# basis-rotated amplitudes


def overlap_factor(op: str, s: int, t: int) -> complex:
    """``<s, B_q | t>`` for a single qubit measured in Pauli ``op``."""
    if op == "Z":
        return complex(s == t)
    sign = -1.0 if (s and t) else 1.0
    if op == "X":
        return _S2 * sign
    if op == "Y":
        return _S2 * sign * (-1j) ** t
    raise ValueError(f"unknown Pauli {op!r}")


def expand_records(bases: list[str], basis_idx, bits):
    """Connected computational strings for each record.

    Returns ``(rec, t_bits, coef)``: record index, the string t, and the
    overlap ``<s,B|t>``, one row per (record, t) pair.
    """
    basis_idx = np.asarray(basis_idx)
    bits = np.asarray(bits, dtype=np.int8)
    rec_out, t_out, c_out = [], [], []
    for b in np.unique(basis_idx):
        basis = bases[b]
        pos = non_z_positions(basis)
        K = len(pos)
        if K > K_MAX:
            raise CapabilityError(f"basis {basis} has {K} non-Z positions; K_max is {K_MAX}")
        rows = np.flatnonzero(basis_idx == b)
        s = bits[rows]
        for a in range(2**K):
            assign = [(a >> (K - 1 - j)) & 1 for j in range(K)]
            t = s.copy()
            coef = np.ones(rows.size, dtype=complex)
            for q, tq in zip(pos, assign):
                t[:, q] = tq
                coef *= np.where(s[:, q] == 1, overlap_factor(basis[q], 1, tq), overlap_factor(basis[q], 0, tq))
            rec_out.append(rows)
            t_out.append(t)
            c_out.append(coef)
    return np.concatenate(rec_out), np.concatenate(t_out), np.concatenate(c_out)


def _log_basis_amplitudes(logpsi_t, rec, coef, n_rec):
    """``ln A_r`` with ``A_r = sum_t coef * psi_t``, evaluated with a per-record shift."""
    shift = np.full(n_rec, -np.inf)
    np.maximum.at(shift, rec, logpsi_t.real)
    terms = coef * np.exp(logpsi_t - shift[rec])
    acc = np.zeros(n_rec, dtype=complex)
    np.add.at(acc, rec, terms)
    with np.errstate(divide="ignore"):
        return shift + np.log(acc), terms, acc


def basis_amplitudes(params: NqsParameters, bases, basis_idx, bits) -> np.ndarray:
    """``sum_t <s,B|t><t|psi>`` for every record."""
    rec, t, coef = expand_records(bases, basis_idx, bits)
    logpsi = nqs.log_psi(params, t)
    lnA, _, _ = _log_basis_amplitudes(logpsi, rec, coef, len(basis_idx))
    return np.exp(lnA)


def basis_amplitude(params: NqsParameters, s, basis: str) -> complex:
    _check_basis(basis, params.config.n_qubits)
    s = np.asarray([int(c) for c in s] if isinstance(s, str) else s, dtype=np.int8)
    return complex(basis_amplitudes(params, [basis], [0], s[None, :])[0])


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray | None
    clamped: int
    n_records: int


def nqst_loss(params: NqsParameters, ds: MeasurementDataset, *, with_grad: bool = False) -> LossResult:
    """Multiplicity-weighted mean of ``-ln |A_r|^2`` and optionally its gradient."""
    if len(ds) == 0:
        raise ValueError("empty batch")
    rec, t, coef = expand_records(ds.bases, ds.basis_idx, ds.bits)
    # the same string t shows up under many records; run the network once per unique t
    key = bits_to_index(t)
    uniq, first, inv = np.unique(key, return_index=True, return_inverse=True)
    ut = t[first]
    if with_grad:
        lp, ph, cache = nqs.forward(params, ut, keep_cache=True)
    else:
        lp, ph = nqs.forward(params, ut)
    logpsi = (0.5 * lp + 1j * ph)[inv]
    lnA, terms, acc = _log_basis_amplitudes(logpsi, rec, coef, len(ds))
    log_p = 2.0 * lnA.real
    bad = ~np.isfinite(log_p) | (log_p < LOG_CLAMP)
    n_bad = int(bad.sum())
    if n_bad == len(ds):
        raise DegenerateModelError(f"all {n_bad} records have model probability below 1e-300")
    log_p = np.where(bad, LOG_CLAMP, log_p)
    w = ds.counts / ds.counts.sum()
    loss = float(-(w @ log_p))
    grad = None
    if with_grad:
        # d(-2 Re ln A_r) = -2 Re[sum_t (coef psi_t / A_r) d ln psi_t]
        rw = np.where(bad, 0.0, -2.0 * w)
        with np.errstate(invalid="ignore", divide="ignore"):
            cw = np.where(bad[rec], 0.0, rw[rec] * terms / acc[rec])
        cw_u = np.zeros(uniq.size, dtype=complex)
        np.add.at(cw_u, inv, cw)
        grad = nqs.backward(params, cache, 0.5 * cw_u.real, -cw_u.imag)
    return LossResult(loss, grad, n_bad, len(ds))


# --------------------------------------------------------------------------
# training


@dataclass
class NqstConfig:
    epochs: int = 50
    batch_size: int = 512
    lr: float = 1e-2
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("NQST needs epochs >= 0, batch_size >= 1 and lr > 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class NqstResult:
    params: NqsParameters
    trace: list[dict]
    best_epoch: int
    best_val_loss: float


def _minibatches(ds: MeasurementDataset, batch_size: int, rng):
    owner = rng.permutation(np.repeat(np.arange(len(ds)), ds.counts))
    for start in range(0, owner.size, batch_size):
        cnt = np.bincount(owner[start : start + batch_size], minlength=len(ds))
        yield ds.subset(cnt)


def train_nqst(params: NqsParameters, ds: MeasurementDataset, cfg: NqstConfig, rng: np.random.Generator) -> NqstResult:
    """Minibatch Adam on the shot-level training split; keep the best validation checkpoint."""
    train, val = ds.split(cfg.val_fraction, rng)
    if len(val) == 0:
        val = train
    params = params.copy()
    opt = nqs.AdamState.zeros(params.flat.size)

    def val_loss(p):
        return nqst_loss(p, val).loss

    best = params.copy()
    best_val = val_loss(params)
    best_epoch = 0
    trace = [{"epoch": 0, "train_loss": nqst_loss(params, train).loss, "val_loss": best_val, "clamped": 0}]
    for epoch in range(1, cfg.epochs + 1):
        total, weight, clamped = 0.0, 0, 0
        for batch in _minibatches(train, cfg.batch_size, rng):
            res = nqst_loss(params, batch, with_grad=True)
            if not np.isfinite(res.loss):
                raise NqstDiverged(f"non-finite training loss in epoch {epoch}", trace)
            opt, params.flat = nqs.adam_step(opt, params.flat, res.grad, cfg.lr)
            total += res.loss * batch.n_shots
            weight += batch.n_shots
            clamped += res.clamped
        v = val_loss(params)
        if not np.isfinite(v):
            raise NqstDiverged(f"non-finite validation loss in epoch {epoch}", trace)
        trace.append({"epoch": epoch, "train_loss": total / weight, "val_loss": v, "clamped": clamped})
        log.debug("nqst epoch %d train %.5f val %.5f", epoch, total / weight, v)
        if v < best_val:
            best, best_val, best_epoch = params.copy(), v, epoch
    return NqstResult(best, trace, best_epoch, best_val)
