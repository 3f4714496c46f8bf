"""Variational Monte Carlo on the Transformer wavefunction.

Energy estimator and gradient over a batch of exact samples::

    E      = mean_s H_loc(s)
    grad E = (2/b) Re sum_s (H_loc(s) - E)^* grad ln psi(s)

plus an L1 regularizer ``-eps * sum_s |psi(s)|`` whose gradient estimator is
``-eps/b sum_s |psi(s)|^-1 grad Re ln psi(s)``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nqs
from .nqs import NqsParameters
from .pauli import PauliHamiltonian, all_bitstrings, bits_to_index, index_to_bits

log = logging.getLogger(__name__)

# |psi(s)| below this in a drawn sample: no local energy (|psi|^2 < 1e-300)
LOG_AMP_FLOOR = 0.5 * np.log(1e-300)
# regularizer weight 1/|psi| is not applied below this amplitude
REG_AMP_FLOOR = 1e-8
_HTOL = 1e-14


class VmcDiverged(FloatingPointError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class NqsWavefunction:
    def __init__(self, params: NqsParameters):
        self.params = params
        self.n_qubits = params.config.n_qubits

    def log_psi(self, bits):
        return nqs.log_psi(self.params, bits)

    def sample_counts(self, batch, rng):
        return nqs.sample_counts(self.params, batch, rng)


class TableWavefunction:
    """Wavefunction given as an explicit 2^N amplitude vector (kron order)."""

    def __init__(self, vector):
        vector = np.asarray(vector, dtype=complex)
        n = int(round(np.log2(vector.size)))
        if 2**n != vector.size:
            raise ValueError("table length must be a power of two")
        self.vector = vector / np.linalg.norm(vector)
        self.n_qubits = n

    def log_psi(self, bits):
        amp = self.vector[bits_to_index(np.atleast_2d(bits))]
        with np.errstate(divide="ignore"):
            return np.log(np.abs(amp)) + 1j * np.angle(amp)

    def sample_counts(self, batch, rng):
        counts = rng.multinomial(batch, np.abs(self.vector) ** 2)
        idx = np.flatnonzero(counts)
        return index_to_bits(idx, self.n_qubits), counts[idx]


def _as_wavefunction(wf):
    return NqsWavefunction(wf) if isinstance(wf, NqsParameters) else wf


def local_energies(wf, H: PauliHamiltonian, bits, log_psi_s=None):
    """``H_loc(s)`` for each row of ``bits`` and a mask of usable samples.

    Samples whose own amplitude underflows get ``H_loc = 0`` and ``ok = False``.
    Each distinct connected string is evaluated once.
    """
    wf = _as_wavefunction(wf)
    bits = np.atleast_2d(np.asarray(bits, dtype=np.int8))
    if bits.shape[1] != H.n_qubits:
        raise ValueError("bitstring length does not match the Hamiltonian")
    if log_psi_s is None:
        log_psi_s = wf.log_psi(bits)
    ok = log_psi_s.real > LOG_AMP_FLOOR
    t, h = H.connected(bits_to_index(bits))
    keep = np.abs(h) > _HTOL
    keep[:, 0] = True
    rows, cols = np.nonzero(keep)
    uniq, inv = np.unique(t[rows, cols], return_inverse=True)
    log_t = wf.log_psi(index_to_bits(uniq, H.n_qubits))[inv]
    with np.errstate(invalid="ignore", over="ignore"):
        ratio = np.exp(log_t - log_psi_s[rows])
    contrib = np.where(ok[rows], h[rows, cols] * ratio, 0.0)
    hloc = np.zeros(bits.shape[0], dtype=complex)
    np.add.at(hloc, rows, contrib)
    return hloc, ok


def local_energy(wf, H: PauliHamiltonian, s) -> complex:
    hloc, ok = local_energies(wf, H, np.asarray(s)[None, :])
    if not ok[0]:
        raise FloatingPointError("amplitude of the sample underflows; local energy undefined")
    return complex(hloc[0])


@dataclass
class GradientEstimate:
    energy: float
    grad: np.ndarray
    variance: float
    clamped: int
    reg_excluded: int
    n_unique: int
    energy_imag: float = 0.0


def _estimate(params: NqsParameters, H: PauliHamiltonian, bits, weights, eps_reg: float) -> GradientEstimate:
    """Weighted estimator; ``weights`` are sample frequencies summing to 1."""
    lp, ph, cache = nqs.forward(params, bits, keep_cache=True)
    log_s = 0.5 * lp + 1j * ph
    hloc, ok = local_energies(params, H, bits, log_s)
    w = np.where(ok, weights, 0.0)
    if w.sum() <= 0:
        raise FloatingPointError("every sample has an underflowing amplitude")
    w = w / w.sum()
    E = w @ hloc
    dev = hloc - E
    variance = float(w @ np.abs(dev) ** 2)
    cw = 2.0 * w * np.conj(dev)  # grad of Re[cw * ln psi]
    dlogp = 0.5 * cw.real
    dphase = -cw.imag
    excluded = 0
    if eps_reg > 0.0:
        amp = np.exp(0.5 * lp)
        use = amp >= REG_AMP_FLOOR
        excluded = int(np.count_nonzero(~use & (weights > 0)))
        # grad Re ln psi = grad log_prob / 2
        rw = np.where(use, -eps_reg * weights / np.where(use, amp, 1.0), 0.0)
        dlogp = dlogp + 0.5 * rw
    grad = nqs.backward(params, cache, dlogp, dphase)
    return GradientEstimate(float(E.real), grad, variance, int(np.count_nonzero(~ok)), excluded,
                            int(bits.shape[0]), float(E.imag))


def vmc_gradient(params: NqsParameters, H: PauliHamiltonian, batch: int, eps_reg: float,
                 rng: np.random.Generator) -> GradientEstimate:
    """Sampled estimate of the energy and of grad(E + L_reg) from ``batch`` draws."""
    if batch < 2:
        raise ValueError("VMC batch must be at least 2")
    bits, counts = nqs.sample_counts(params, batch, rng)
    return _estimate(params, H, bits, counts / batch, eps_reg)


def exhaustive_gradient(params: NqsParameters, H: PauliHamiltonian, eps_reg: float = 0.0) -> GradientEstimate:
    """Same estimator with the batch replaced by the full Born distribution."""
    bits = all_bitstrings(params.config.n_qubits)
    lp, _ = nqs.forward(params, bits)
    return _estimate(params, H, bits, np.exp(lp), eps_reg)


def rayleigh_quotient(params: NqsParameters, H: PauliHamiltonian) -> float:
    psi = nqs.statevector(params)
    return float(np.vdot(psi, H.matvec(psi)).real / np.vdot(psi, psi).real)


# --------------------------------------------------------------------------
# schedules and training loop


@dataclass
class VmcConfig:
    iterations: int = 400
    batch: int = 512
    lr: float = 1e-2
    lr_drops: tuple = ()
    lr_drop_factor: float = 10.0
    reg_eps: float = 0.1
    reg_iterations: int = 200
    reg_schedule: str = "step"  # "step": constant then 0; "linear": decays to 0

    def __post_init__(self):
        self.lr_drops = tuple(int(i) for i in self.lr_drops)
        if self.batch < 2:
            raise ValueError("VMC batch must be at least 2")
        if self.iterations < 0 or self.lr <= 0 or self.lr_drop_factor <= 0:
            raise ValueError("VMC needs iterations >= 0, lr > 0 and a positive lr drop factor")
        if self.reg_eps < 0 or self.reg_iterations < 0:
            raise ValueError("regularizer strength and duration must be non-negative")
        if self.reg_schedule not in ("step", "linear"):
            raise ValueError(f"unknown regularizer schedule {self.reg_schedule!r}")

    def eps_at(self, it: int) -> float:
        if it >= self.reg_iterations or self.reg_eps == 0.0:
            return 0.0
        if self.reg_schedule == "step":
            return self.reg_eps
        return self.reg_eps * (1.0 - it / self.reg_iterations)

    def lr_at(self, it: int) -> float:
        drops = sum(1 for d in self.lr_drops if it >= d)
        return self.lr / self.lr_drop_factor**drops


TRACE_COLUMNS = ("iteration", "energy", "variance", "eps_reg", "lr", "clamp_count")


@dataclass
class VmcResult:
    params: NqsParameters
    trace: list[dict] = field(default_factory=list)


def train_vmc(params: NqsParameters, H: PauliHamiltonian, cfg: VmcConfig, rng: np.random.Generator) -> VmcResult:
    params = params.copy()
    opt = nqs.AdamState.zeros(params.flat.size)
    trace: list[dict] = []
    for it in range(cfg.iterations):
        eps = cfg.eps_at(it)
        lr = cfg.lr_at(it)
        try:
            est = vmc_gradient(params, H, cfg.batch, eps, rng)
        except FloatingPointError as exc:
            raise VmcDiverged(f"VMC iteration {it}: {exc}", trace) from exc
        if not np.isfinite(est.energy) or not np.all(np.isfinite(est.grad)):
            raise VmcDiverged(f"VMC iteration {it}: non-finite energy or gradient", trace)
        trace.append({"iteration": it, "energy": est.energy, "variance": est.variance, "eps_reg": eps,
                      "lr": lr, "clamp_count": est.clamped + est.reg_excluded})
        opt, params.flat = nqs.adam_step(opt, params.flat, est.grad, lr)
        if it % 50 == 0:
            log.debug("vmc it %d E %.6f var %.3e eps %.3g", it, est.energy, est.variance, eps)
    return VmcResult(params, trace)


def write_vmc_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in trace:
            w.writerow({k: (repr(float(row[k])) if k in ("energy", "variance", "eps_reg", "lr") else row[k])
                        for k in TRACE_COLUMNS})
