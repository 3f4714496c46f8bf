"""Reference solutions: matrix-free Lanczos ground state and expectation values."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .pauli import PauliHamiltonian

log = logging.getLogger(__name__)

MAX_EXACT_QUBITS = 16


class LanczosConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class LanczosResult:
    energy: float
    state: np.ndarray
    residual: float
    iterations: int
    restarts: int


def lanczos_ground_state(
    matvec,
    dim: int,
    *,
    krylov_dim: int = 200,
    tol: float = 1e-8,
    max_restarts: int = 50,
    seed: int = 1234,
) -> LanczosResult:
    """Lowest eigenpair of a Hermitian operator given only ``v -> Hv``.

    Full reorthogonalization (two Gram-Schmidt passes) against the whole
    Krylov basis; restarts from the current Ritz vector when the residual
    ``||Hx - Ex||`` is still above ``tol`` after ``krylov_dim`` steps.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    m_max = min(krylov_dim, dim)
    total = 0
    residual = np.inf
    for restart in range(max_restarts + 1):
        V = np.zeros((m_max, dim), dtype=complex)
        alphas, betas = [], []
        V[0] = v
        w_prev = None
        m = 0
        for j in range(m_max):
            w = matvec(V[j])
            total += 1
            a = np.vdot(V[j], w).real
            alphas.append(a)
            m = j + 1
            if j + 1 == m_max:
                break
            w = w - a * V[j]
            if w_prev is not None:
                w = w - betas[-1] * w_prev
            for _ in range(2):
                w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
            b = np.linalg.norm(w)
            if b < 1e-13 * max(1.0, abs(a)):
                break  # invariant subspace
            betas.append(b)
            V[j + 1] = w / b
            w_prev = V[j]
        T = np.diag(alphas) + np.diag(betas[: m - 1], 1) + np.diag(betas[: m - 1], -1)
        evals, evecs = np.linalg.eigh(T)
        x = evecs[:, 0] @ V[:m]
        x /= np.linalg.norm(x)
        hx = matvec(x)
        energy = float(np.vdot(x, hx).real)
        residual = float(np.linalg.norm(hx - energy * x))
        log.debug("lanczos restart %d: m=%d E=%.12f residual=%.2e", restart, m, energy, residual)
        if residual <= tol:
            return LanczosResult(energy, x, residual, total, restart)
        v = x
    raise LanczosConvergenceError("Lanczos did not converge", residual)


def exact_ground_state(H: PauliHamiltonian, **kwargs) -> tuple[float, np.ndarray]:
    if H.n_qubits > MAX_EXACT_QUBITS:
        raise ValueError(f"exact solve limited to {MAX_EXACT_QUBITS} qubits, got {H.n_qubits}")
    res = lanczos_ground_state(H.matvec, H.dim, **kwargs)
    return res.energy, res.state


def _check_norm(psi):
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > 1e-8:
        raise ValueError(f"state is not normalized (norm {norm:.12f})")


def expectation(H: PauliHamiltonian, psi: np.ndarray) -> float:
    """``<psi|H|psi>`` for a normalized statevector, or ``Tr(rho H)`` for a density matrix."""
    psi = np.asarray(psi)
    if psi.ndim == 2:
        if abs(np.trace(psi) - 1.0) > 1e-8:
            raise ValueError("density matrix trace deviates from 1")
        val = np.trace(H.matvec(psi))
    else:
        _check_norm(psi)
        val = np.vdot(psi, H.matvec(psi))
    if abs(val.imag) > 1e-10 * max(1.0, abs(val.real)):
        raise ValueError(f"expectation has imaginary part {val.imag:.3e}")
    return float(val.real)


def energy_variance(H: PauliHamiltonian, psi: np.ndarray) -> float:
    _check_norm(psi)
    hpsi = H.matvec(psi)
    e = np.vdot(psi, hpsi).real
    return float(np.vdot(hpsi, hpsi).real - e * e)
