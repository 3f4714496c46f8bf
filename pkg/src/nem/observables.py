"""Physical observables on statevectors and density matrices.

Functions accept either a statevector (1-D) or a density matrix (2-D).
"""

from __future__ import annotations

import numpy as np

from .pauli import all_bitstrings


def _n_qubits(state: np.ndarray) -> int:
    n = int(round(np.log2(state.shape[0])))
    if 2**n != state.shape[0]:
        raise ValueError(f"state dimension {state.shape[0]} is not a power of two")
    return n


def basis_probabilities(state: np.ndarray) -> np.ndarray:
    state = np.asarray(state)
    if state.ndim == 1:
        return np.abs(state) ** 2
    return np.real(np.diag(state)).copy()


def order_parameter_diagonal(n_sites: int) -> np.ndarray:
    """Diagonal of ``1/(2N(N-1)) sum_{i<j} (1 + (-1)^i Z_i)(1 + (-1)^j Z_j)``."""
    bits = all_bitstrings(n_sites).astype(float)
    stagger = (-1.0) ** np.arange(1, n_sites + 1)
    u = 1.0 + stagger * (1.0 - 2.0 * bits)  # (1 + (-1)^j z_j), sites 1..N
    pair_sum = 0.5 * (u.sum(axis=1) ** 2 - (u**2).sum(axis=1))
    return pair_sum / (2 * n_sites * (n_sites - 1))


def order_parameter(state: np.ndarray, n_sites: int | None = None) -> float:
    state = np.asarray(state)
    n = _n_qubits(state) if n_sites is None else n_sites
    if n < 2:
        raise ValueError("order parameter needs at least two sites")
    if 2**n != state.shape[0]:
        raise ValueError("n_sites does not match state dimension")
    p = basis_probabilities(state)
    if abs(p.sum() - 1.0) > 1e-8:
        raise ValueError("state is not normalized")
    return float(p @ order_parameter_diagonal(n))


def reduced_density_matrix(state: np.ndarray, k: int) -> np.ndarray:
    """Reduced state of the leading ``k`` qubits."""
    state = np.asarray(state)
    n = _n_qubits(state)
    if not 1 <= k < n:
        raise ValueError(f"partition size k={k} must satisfy 1 <= k < {n}")
    da, db = 2**k, 2 ** (n - k)
    if state.ndim == 1:
        m = state.reshape(da, db)
        return m @ m.conj().T
    rho = state.reshape(da, db, da, db)
    return np.einsum("ajbj->ab", rho)


def renyi2_entropy(state: np.ndarray, k: int) -> float:
    """``S_2 = -ln Tr(rho_A^2)`` for the first ``k`` qubits (natural log)."""
    rho_a = reduced_density_matrix(state, k)
    purity = float(np.real(np.vdot(rho_a, rho_a)))
    return float(-np.log(purity))


def purity(state: np.ndarray) -> float:
    state = np.asarray(state)
    if state.ndim == 1:
        return 1.0
    return float(np.real(np.vdot(state, state)))


def fidelity(state: np.ndarray, reference: np.ndarray) -> float:
    """``|<ref|psi>|^2`` or ``<ref|rho|ref>``."""
    state = np.asarray(state)
    reference = np.asarray(reference)
    if state.shape[0] != reference.shape[0]:
        raise ValueError("dimension mismatch between state and reference")
    if state.ndim == 1:
        return float(abs(np.vdot(reference, state)) ** 2)
    return float(np.real(np.vdot(reference, state @ reference)))
