"""Statevector and density-matrix simulation with per-qubit depolarizing noise.

Conventions: ``R_Z(t) = exp(-i t Z / 2)``, ``R_X(t) = exp(-i t X / 2)``,
``XXYY(t) = exp(i t (XX + YY) / 2)``.  Measuring in the X basis applies a
Hadamard before reading Z; the Y basis applies ``S^dagger`` then Hadamard, so
outcome 0 always corresponds to the +1 eigenvalue.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .pauli import entangler_hamiltonian, index_to_bits

MAX_MIXED_QUBITS = 12
MAX_PURE_QUBITS = 20


class CapabilityError(RuntimeError):
    """Requested simulation exceeds a resource guard."""


@dataclass
class QuantumState:
    kind: str  # "pure" or "mixed"
    n_qubits: int
    data: np.ndarray

    @classmethod
    def pure(cls, vector) -> "QuantumState":
        vector = np.asarray(vector, dtype=complex)
        n = int(round(np.log2(vector.size)))
        return cls("pure", n, vector)

    @classmethod
    def mixed(cls, rho) -> "QuantumState":
        rho = np.asarray(rho, dtype=complex)
        n = int(round(np.log2(rho.shape[0])))
        return cls("mixed", n, rho)

    @classmethod
    def basis(cls, bits, mixed: bool = False) -> "QuantumState":
        bits = [int(b) for b in bits]
        n = len(bits)
        vec = np.zeros(2**n, dtype=complex)
        vec[int("".join(map(str, bits)), 2)] = 1.0
        st = cls.pure(vec)
        return st.to_mixed() if mixed else st

    @property
    def is_pure(self) -> bool:
        return self.kind == "pure"

    def to_mixed(self) -> "QuantumState":
        if not self.is_pure:
            return self
        if self.n_qubits > MAX_MIXED_QUBITS:
            raise CapabilityError(f"density matrices limited to {MAX_MIXED_QUBITS} qubits")
        v = self.data
        return QuantumState("mixed", self.n_qubits, np.outer(v, v.conj()))

    def copy(self) -> "QuantumState":
        return QuantumState(self.kind, self.n_qubits, self.data.copy())

    def probabilities(self) -> np.ndarray:
        if self.is_pure:
            return np.abs(self.data) ** 2
        return np.clip(np.real(np.diag(self.data)), 0.0, None)

    def validate(self, tol: float = 1e-8) -> None:
        if self.is_pure:
            norm = np.linalg.norm(self.data)
            if abs(norm - 1) > tol:
                raise ValueError(f"statevector norm {norm} deviates from 1")
            return
        rho = self.data
        if abs(np.trace(rho) - 1) > tol:
            raise ValueError("density matrix trace deviates from 1")
        if np.abs(rho - rho.conj().T).max() > 1e-10:
            raise ValueError("density matrix is not Hermitian")
        if np.linalg.eigvalsh(rho).min() < -1e-9:
            raise ValueError("density matrix has negative eigenvalues")


@dataclass(frozen=True)
class GateOp:
    kind: str  # rz | rx | cnot | xxyy | exp_entangler
    qubits: tuple
    angle: float = 0.0


_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_SDG = np.diag([1, -1j])
_BASIS_ROTATION = {"X": _H, "Y": _H @ _SDG, "Z": None}


def rz(theta):
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def rx(theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def xxyy(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array(
        [[1, 0, 0, 0], [0, c, 1j * s, 0], [0, 1j * s, c, 0], [0, 0, 0, 1]], dtype=complex
    )


CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def _apply_to_vector(vec, mat, qubits, n):
    k = len(qubits)
    t = vec.reshape((2,) * n)
    t = np.tensordot(mat.reshape((2,) * (2 * k)), t, axes=(list(range(k, 2 * k)), list(qubits)))
    t = np.moveaxis(t, list(range(k)), list(qubits))
    return t.reshape(-1)


def _apply_to_operator(rho, mat, qubits, n):
    """``U rho U^dagger`` for a k-qubit ``U`` acting on ``qubits``."""
    k = len(qubits)
    u = mat.reshape((2,) * (2 * k))
    t = rho.reshape((2,) * (2 * n))
    t = np.tensordot(u, t, axes=(list(range(k, 2 * k)), list(qubits)))
    t = np.moveaxis(t, list(range(k)), list(qubits))
    cols = [n + q for q in qubits]
    t = np.tensordot(t, u.conj(), axes=(cols, list(range(k, 2 * k))))
    t = np.moveaxis(t, list(range(2 * n - k, 2 * n)), cols)
    return t.reshape(rho.shape)


def apply_unitary(state: QuantumState, mat: np.ndarray, qubits) -> QuantumState:
    qubits = tuple(int(q) for q in qubits)
    n = state.n_qubits
    if len(set(qubits)) != len(qubits) or any(not 0 <= q < n for q in qubits):
        raise ValueError(f"invalid target qubits {qubits} for {n}-qubit state")
    if state.is_pure:
        return QuantumState("pure", n, _apply_to_vector(state.data, mat, qubits, n))
    return QuantumState("mixed", n, _apply_to_operator(state.data, mat, qubits, n))


def apply_gate(state: QuantumState, g: GateOp) -> QuantumState:
    if g.kind == "rz":
        mat = rz(g.angle)
    elif g.kind == "rx":
        mat = rx(g.angle)
    elif g.kind == "cnot":
        mat = CNOT
    elif g.kind == "xxyy":
        mat = xxyy(g.angle)
    elif g.kind == "exp_entangler":
        if tuple(g.qubits) != tuple(range(state.n_qubits)):
            raise ValueError("entangler acts on all qubits")
        return evolve_entangler(state, g.angle)
    else:
        raise ValueError(f"unknown gate kind {g.kind!r}")
    expected = 2 if g.kind in ("cnot", "xxyy") else 1
    if len(g.qubits) != expected:
        raise ValueError(f"{g.kind} acts on {expected} qubit(s), got {g.qubits}")
    return apply_unitary(state, mat, g.qubits)


def apply_diagonal(state: QuantumState, diag: np.ndarray) -> QuantumState:
    """Apply a diagonal unitary given by its diagonal entries."""
    if state.is_pure:
        return QuantumState("pure", state.n_qubits, diag * state.data)
    return QuantumState("mixed", state.n_qubits, diag[:, None] * state.data * diag.conj()[None, :])


def rz_layer_diagonal(angles) -> np.ndarray:
    """Diagonal of ``prod_q R_Z(angles[q])``."""
    angles = np.asarray(angles, dtype=float)
    n = angles.size
    bits = index_to_bits(np.arange(2**n), n)
    z = 1.0 - 2.0 * bits
    return np.exp(-0.5j * (z @ angles))


@lru_cache(maxsize=16)
def _entangler_eigensystem(n, J, B, alpha):
    h = entangler_hamiltonian(n, J, B, alpha).to_dense().real
    evals, evecs = np.linalg.eigh(h)
    return evals, evecs


def entangler_unitary(n, t, J=1.0, B=10.0, alpha=1.0, sign=1) -> np.ndarray:
    """``exp(sign * i t H_E)`` assembled from a cached eigendecomposition."""
    evals, evecs = _entangler_eigensystem(n, float(J), float(B), float(alpha))
    return (evecs * np.exp(sign * 1j * t * evals)) @ evecs.T


def evolve_entangler(state: QuantumState, t, J=1.0, B=10.0, alpha=1.0, sign=1) -> QuantumState:
    """Evolve under the long-range XX entangling Hamiltonian.

    ``sign=+1`` applies ``exp(+i t H_E)``; ``sign=-1`` the physical ``exp(-i t H_E)``.
    """
    n = state.n_qubits
    if not state.is_pure and n > MAX_MIXED_QUBITS:
        raise CapabilityError(
            f"entangler evolution on {n}-qubit density matrices exceeds the {MAX_MIXED_QUBITS}-qubit "
            "guard; use the scaling circuit (statevector) for larger systems"
        )
    if n > 14:
        raise CapabilityError("dense entangler exponential refused above 14 qubits")
    if t == 0:
        return state.copy()
    evals, V = _entangler_eigensystem(n, float(J), float(B), float(alpha))
    phases = np.exp(sign * 1j * t * evals)
    if state.is_pure:
        return QuantumState("pure", n, V @ (phases * (V.T @ state.data)))
    # rotate into the eigenbasis, dephase, rotate back; V is real orthogonal
    r = _real_congruence(V, state.data, transpose=True)
    r = phases[:, None] * r * phases.conj()[None, :]
    return QuantumState("mixed", n, _real_congruence(V, r))


def _real_congruence(m: np.ndarray, rho: np.ndarray, transpose: bool = False) -> np.ndarray:
    """``m rho m^T`` (or ``m^T rho m``) for real ``m``, using real GEMMs only."""
    if transpose:
        m = m.T
    re = np.ascontiguousarray(rho.real)
    im = np.ascontiguousarray(rho.imag)
    out = np.empty(rho.shape, dtype=complex)
    out.real = m @ re @ m.T
    out.imag = m @ im @ m.T
    return out


def _depolarize_inplace(r: np.ndarray, n: int, qubit: int, lam: float) -> None:
    a, b = 2**qubit, 2 ** (n - qubit - 1)
    r = r.reshape(a, 2, b, a, 2, b)
    d0 = r[:, 0, :, :, 0, :]
    d1 = r[:, 1, :, :, 1, :]
    traced = (d0 + d1) * (0.5 * lam)
    r *= 1.0 - lam
    d0 += traced
    d1 += traced


def apply_depolarizing(state: QuantumState, qubit: int, lam: float) -> QuantumState:
    """``rho -> (1 - lam) rho + lam (I/2 on qubit) x Tr_qubit(rho)``."""
    if state.is_pure:
        raise TypeError("depolarizing needs a mixed state; promote with to_mixed() first")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"depolarizing probability {lam} outside [0, 1]")
    n = state.n_qubits
    if not 0 <= qubit < n:
        raise ValueError(f"qubit {qubit} out of range")
    r = state.data.copy()
    if lam > 0.0:
        _depolarize_inplace(r, n, qubit, lam)
    return QuantumState("mixed", n, r)


def depolarize_all(state: QuantumState, lam: float, qubits=None) -> QuantumState:
    """Depolarize every listed qubit (all by default) with the same probability."""
    if lam == 0.0:
        return state
    if state.is_pure:
        raise TypeError("depolarizing needs a mixed state; promote with to_mixed() first")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"depolarizing probability {lam} outside [0, 1]")
    n = state.n_qubits
    r = state.data.copy()
    for q in range(n) if qubits is None else qubits:
        _depolarize_inplace(r, n, q, lam)
    return QuantumState("mixed", n, r)


def _validate_basis(basis, n):
    ops = basis.ops if hasattr(basis, "ops") else str(basis)
    if len(ops) != n:
        raise ValueError(f"basis {ops!r} does not match {n} qubits")
    for c in ops:
        if c not in "XYZ":
            raise ValueError(f"measurement basis may only contain X, Y, Z; got {c!r}")
    return ops


def rotate_to_basis(state: QuantumState, basis) -> QuantumState:
    ops = _validate_basis(basis, state.n_qubits)
    for q, c in enumerate(ops):
        if _BASIS_ROTATION[c] is not None:
            state = apply_unitary(state, _BASIS_ROTATION[c], (q,))
    return state


def _diagonal_map(u: np.ndarray) -> np.ndarray:
    """2x4 map from a qubit's (a, b) density entries to outcome probabilities."""
    return np.einsum("sa,sb->sab", u, u.conj()).reshape(2, 4)


_DIAG_MAPS = {c: _diagonal_map(np.eye(2) if u is None else u) for c, u in _BASIS_ROTATION.items()}


def basis_probabilities(state: QuantumState, basis) -> np.ndarray:
    """Outcome distribution ``|<s,B|psi>|^2`` (or ``<s,B|rho|s,B>``) over basis indices."""
    ops = _validate_basis(basis, state.n_qubits)
    n = state.n_qubits
    if state.is_pure:
        p = rotate_to_basis(state, ops).probabilities()
    else:
        # only the diagonal of U rho U^dagger is needed: contract qubit by qubit
        # on the interleaved (a_1 b_1 a_2 b_2 ...) layout
        perm = [ax for q in range(n) for ax in (q, n + q)]
        t = state.data.reshape((2,) * (2 * n)).transpose(perm).reshape(1, -1)
        for q, c in enumerate(ops):
            t = t.reshape(2**q, 4, -1)
            t = np.einsum("sk,lkr->lsr", _DIAG_MAPS[c], t)
        p = np.clip(t.reshape(-1).real, 0.0, None)
    return p / p.sum()


def sample_counts(state: QuantumState, basis, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial outcome counts over basis indices."""
    if shots < 1:
        raise ValueError("shots must be positive")
    return rng.multinomial(shots, basis_probabilities(state, basis))


def sample_in_basis(state: QuantumState, basis, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``shots`` bitstrings, shape ``(shots, N)``, in a product Pauli basis."""
    if shots < 1:
        raise ValueError("shots must be positive")
    p = basis_probabilities(state, basis)
    idx = rng.choice(p.size, size=shots, p=p)
    return index_to_bits(idx, state.n_qubits)


def state_metrics(state: QuantumState, reference: np.ndarray) -> tuple[float, float]:
    """Return ``(fidelity, purity)`` of ``state`` relative to a pure reference."""
    reference = np.asarray(reference)
    if reference.shape[0] != 2**state.n_qubits:
        raise ValueError("reference dimension does not match state")
    if state.is_pure:
        return float(abs(np.vdot(reference, state.data)) ** 2), 1.0
    rho = state.data
    fid = float(np.real(np.vdot(reference, rho @ reference)))
    return fid, float(np.real(np.vdot(rho, rho)))
