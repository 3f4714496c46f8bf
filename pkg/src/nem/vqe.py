"""Variational circuits, grouped shot-based energy estimation and SPSA."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .pauli import PauliHamiltonian, _popcount
from .simulator import (
    CapabilityError,
    GateOp,
    QuantumState,
    MAX_MIXED_QUBITS,
    apply_depolarizing,
    apply_diagonal,
    apply_gate,
    apply_unitary,
    depolarize_all,
    evolve_entangler,
    rz_layer_diagonal,
    sample_counts,
    xxyy,
)

log = logging.getLogger(__name__)

MASS_THRESHOLD = -0.7


# -- hardware-efficient chemistry circuit ------------------------------------


@dataclass(frozen=True)
class ChemistryCircuitSpec:
    """CNOT-chain ansatz with Euler rotations; ``N(3d+2)`` parameters.

    Parameter order: the initial layer holds ``(z, x)`` per qubit (the first
    Z rotation of each Euler triple is dropped), then each of the ``d``
    entangling layers is followed by ``(z1, x, z2)`` per qubit, where the
    operator is ``R_Z(z1) R_X(x) R_Z(z2)``.
    """

    n_qubits: int
    depth: int = 1
    single_qubit_noise: float = 0.0
    two_qubit_noise: float = 0.0

    @property
    def n_params(self) -> int:
        return self.n_qubits * (3 * self.depth + 2)

    @property
    def noisy(self) -> bool:
        return self.single_qubit_noise > 0 or self.two_qubit_noise > 0


def chemistry_circuit(spec: ChemistryCircuitSpec, theta) -> QuantumState:
    theta = np.asarray(theta, dtype=float)
    n = spec.n_qubits
    if theta.shape != (spec.n_params,):
        raise ValueError(
            f"chemistry circuit with N={n}, d={spec.depth} needs N(3d+2) = {spec.n_params} "
            f"parameters, got {theta.size}"
        )
    state = QuantumState.basis([0] * n, mixed=spec.noisy)
    p1, p2 = spec.single_qubit_noise, spec.two_qubit_noise

    def single(state, kind, q, angle):
        state = apply_gate(state, GateOp(kind, (q,), angle))
        if p1 > 0:
            state = apply_depolarizing(state, q, p1)
        return state

    k = 0
    for q in range(n):
        z, x = theta[k : k + 2]
        k += 2
        state = single(state, "rx", q, x)
        state = single(state, "rz", q, z)
    for _ in range(spec.depth):
        for q in range(n - 1):
            state = apply_gate(state, GateOp("cnot", (q, q + 1)))
            if p2 > 0:
                state = apply_depolarizing(state, q, p2)
                state = apply_depolarizing(state, q + 1, p2)
        for q in range(n):
            z1, x, z2 = theta[k : k + 3]
            k += 3
            state = single(state, "rz", q, z2)
            state = single(state, "rx", q, x)
            state = single(state, "rz", q, z1)
    return state


# -- lattice Schwinger circuits -----------------------------------------------


@dataclass(frozen=True)
class SchwingerCircuitSpec:
    """Alternating entangler / symmetric Z-rotation ansatz.

    Independent parameters, per layer: the entangler time (or the shared
    XX+YY angle in scaling mode) followed by ``N/2`` rotation angles
    ``phi_1..phi_{N/2}``; the remaining angles are tied as
    ``phi_{N+1-j} = -phi_j``.
    """

    n_sites: int
    layers: int = 3
    noise: float = 0.0
    mode: str = "analog"  # analog | scaling
    J: float = 1.0
    B: float = 10.0
    alpha: float = 1.0
    entangler_sign: int = 1

    def __post_init__(self):
        if self.n_sites < 2 or self.n_sites % 2:
            raise ValueError("Schwinger circuit needs an even number of sites")
        if self.mode not in ("analog", "scaling"):
            raise ValueError(f"unknown circuit mode {self.mode!r}")
        if self.mode == "scaling" and self.noise > 0:
            raise ValueError("the scaling circuit is simulated without noise")

    @property
    def n_params(self) -> int:
        return self.layers * (self.n_sites // 2 + 1)

    def split(self, params):
        """Return per-layer ``(entangler parameter, full tied angle vector)``."""
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} independent parameters, got {params.size}")
        per = self.n_sites // 2 + 1
        return [
            (params[l * per], tie_rotation_angles(params[l * per + 1 : (l + 1) * per]))
            for l in range(self.layers)
        ]


def tie_rotation_angles(half) -> np.ndarray:
    half = np.asarray(half, dtype=float)
    return np.concatenate([half, -half[::-1]])


def check_tied(angles, atol: float = 1e-12) -> None:
    angles = np.asarray(angles, dtype=float)
    if angles.size % 2 or not np.allclose(angles, -angles[::-1], atol=atol, rtol=0):
        raise ValueError("rotation angles violate the phi_j = -phi_{N+1-j} symmetry")


def initial_bits(n_sites: int, mass: float) -> list[int]:
    """``|0101...>`` for ``m >= -0.7``, ``|1010...>`` below."""
    first = 0 if mass >= MASS_THRESHOLD else 1
    return [(first + j) % 2 for j in range(n_sites)]


def scaling_entangler(state: QuantumState, theta: float) -> QuantumState:
    """Two brick layers of ``exp(i theta (XX+YY)/2)`` on neighbouring qubits."""
    n = state.n_qubits
    if theta == 0:
        return state
    gate = xxyy(theta)
    for start in (0, 1):
        for q in range(start, n - 1, 2):
            state = apply_unitary(state, gate, (q, q + 1))
    return state


def apply_schwinger_layer(state, spec: SchwingerCircuitSpec, ent_param, angles):
    check_tied(angles)
    if spec.mode == "analog":
        state = evolve_entangler(state, ent_param, spec.J, spec.B, spec.alpha, spec.entangler_sign)
    else:
        state = scaling_entangler(state, ent_param)
    state = depolarize_all(state, spec.noise)
    state = apply_diagonal(state, rz_layer_diagonal(angles))
    return depolarize_all(state, spec.noise)


def schwinger_circuit(spec: SchwingerCircuitSpec, params, mass: float) -> QuantumState:
    if spec.mode == "analog" and spec.n_sites > MAX_MIXED_QUBITS:
        raise CapabilityError(
            f"analog Schwinger circuit limited to {MAX_MIXED_QUBITS} sites; use mode='scaling'"
        )
    state = QuantumState.basis(initial_bits(spec.n_sites, mass), mixed=spec.noise > 0)
    for ent, angles in spec.split(params):
        state = apply_schwinger_layer(state, spec, ent, angles)
    return state


# -- grouped energy estimation -----------------------------------------------


class GroupingError(ValueError):
    pass


@dataclass
class MeasurementGroup:
    basis: str
    terms: list

    def outcome_values(self, n_qubits: int) -> np.ndarray:
        """Sum of term eigenvalues for every outcome index in this basis."""
        idx = np.arange(2**n_qubits, dtype=np.int64)
        vals = np.zeros(idx.size)
        for t in self.terms:
            support = t.flip_mask | t.sign_mask  # every non-identity position
            vals += float(np.real(t.coefficient)) * (1 - 2 * (_popcount(idx & support) & 1))
        return vals


def group_qubitwise(H: PauliHamiltonian) -> list[MeasurementGroup]:
    """Greedy first-fit grouping of qubit-wise commuting terms.

    Diagonal terms are placed first, then by decreasing weight and
    lexicographic order.  Unconstrained positions of a group are measured in Z.
    """
    order = sorted(H.terms, key=lambda t: (not t.is_diagonal, -t.weight, t.ops))
    slots: list[list] = []
    members: list[list] = []
    for term in order:
        for basis, mem in zip(slots, members):
            if all(c == "I" or b is None or b == c for c, b in zip(term.ops, basis)):
                for q, c in enumerate(term.ops):
                    if c != "I":
                        basis[q] = c
                mem.append(term)
                break
        else:
            slots.append([c if c != "I" else None for c in term.ops])
            members.append([term])
    groups = []
    for basis, mem in zip(slots, members):
        ops = "".join(b or "Z" for b in basis)
        for t in mem:
            if any(c != "I" and c != b for c, b in zip(t.ops, ops)):
                raise GroupingError(f"term {t.ops} is not diagonal in basis {ops}")
        groups.append(MeasurementGroup(ops, mem))
    return groups


@dataclass
class EnergyEstimator:
    """Shot-based estimator of ``<H>`` using qubit-wise commuting groups."""

    H: PauliHamiltonian
    groups: list = None

    def __post_init__(self):
        if self.groups is None:
            self.groups = group_qubitwise(self.H)
        self._values = [g.outcome_values(self.H.n_qubits) for g in self.groups]

    @property
    def bases(self) -> list[str]:
        return [g.basis for g in self.groups]

    def estimate(self, state: QuantumState, shots: int, rng) -> tuple[float, float]:
        """Return ``(energy, standard error)``."""
        energy = self.H.identity_offset
        var = 0.0
        for g, vals in zip(self.groups, self._values):
            counts = sample_counts(state, g.basis, shots, rng)
            mean = counts @ vals / shots
            energy += mean
            if shots > 1:
                var += (counts @ (vals - mean) ** 2) / (shots - 1) / shots
        return float(energy), float(math.sqrt(var))


def estimate_energy(state, H, grouping=None, shots_per_basis=1024, rng=None) -> float:
    est = grouping if isinstance(grouping, EnergyEstimator) else EnergyEstimator(H, grouping)
    rng = np.random.default_rng() if rng is None else rng
    return est.estimate(state, shots_per_basis, rng)[0]


# -- SPSA ---------------------------------------------------------------------


@dataclass
class SpsaConfig:
    a0: float = 0.1
    c0: float = 0.1
    alpha: float = 0.602
    gamma: float = 0.101
    A: float = 10.0
    iterations: int = 200
    calibrate: bool = False
    target_step: float = 0.1
    n_probe: int = 25

    def __post_init__(self):
        if self.a0 <= 0 or self.c0 <= 0:
            raise ValueError("SPSA gains a0, c0 must be positive")
        if not (0 < self.alpha <= 1 and 0 < self.gamma <= 1):
            raise ValueError("SPSA exponents must lie in (0, 1]")
        if self.A < 0 or self.iterations < 0:
            raise ValueError("SPSA stability constant and iteration count must be non-negative")


@dataclass
class SpsaRecord:
    iteration: int
    evaluation: int
    energy: float
    param_hash: str


class SpsaAborted(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def param_hash(theta) -> str:
    return hashlib.sha1(np.ascontiguousarray(theta, dtype="<f8").tobytes()).hexdigest()[:12]


def _rademacher(rng, n):
    return 1.0 - 2.0 * rng.integers(0, 2, size=n)


def spsa_calibrate(objective, theta0, cfg: SpsaConfig, rng, trace=None) -> float:
    """Pick ``a0`` so the first update has per-component magnitude ``target_step``."""
    if cfg.n_probe < 2:
        raise ValueError("calibration needs at least two probes")
    theta0 = np.asarray(theta0, dtype=float)
    total = 0.0
    for _ in range(cfg.n_probe):
        delta = _rademacher(rng, theta0.size)
        fp = objective(theta0 + cfg.c0 * delta)
        fm = objective(theta0 - cfg.c0 * delta)
        if trace is not None:
            h = param_hash(theta0)
            trace.append(SpsaRecord(-1, len(trace), float(fp), h))
            trace.append(SpsaRecord(-1, len(trace), float(fm), h))
        total += abs(fp - fm) / (2 * cfg.c0)
    mean_grad = total / cfg.n_probe
    if mean_grad <= 0 or not np.isfinite(mean_grad):
        log.warning("SPSA calibration found a flat objective; falling back to a0 = 0.1")
        return 0.1
    return cfg.target_step * (1 + cfg.A) ** cfg.alpha / mean_grad


def spsa_minimize(objective: Callable, theta0, cfg: SpsaConfig, rng):
    """Minimize a noisy objective; returns ``(theta, trace)``.

    ``trace`` lists every objective evaluation (two per iteration, plus the
    calibration probes flagged with iteration ``-1``).
    """
    theta = np.array(theta0, dtype=float)
    trace: list[SpsaRecord] = []
    a0 = cfg.a0
    if cfg.calibrate:
        a0 = spsa_calibrate(objective, theta, cfg, rng, trace)
        log.info("calibrated SPSA a0 = %.4g", a0)
    for k in range(cfg.iterations):
        ak = a0 / (k + 1 + cfg.A) ** cfg.alpha
        ck = cfg.c0 / (k + 1) ** cfg.gamma
        delta = _rademacher(rng, theta.size)
        h = param_hash(theta)
        fp = objective(theta + ck * delta)
        trace.append(SpsaRecord(k, len(trace), float(fp), h))
        fm = objective(theta - ck * delta)
        trace.append(SpsaRecord(k, len(trace), float(fm), h))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise SpsaAborted(f"objective returned NaN at iteration {k}", trace)
        grad = (fp - fm) / (2 * ck) * delta
        theta = theta - ak * grad
    return theta, trace


def write_spsa_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "evaluation", "energy", "param_hash"])
        for r in trace:
            w.writerow([r.iteration, r.evaluation, repr(r.energy), r.param_hash])


# -- VQE driver ---------------------------------------------------------------


@dataclass
class VqeResult:
    theta: np.ndarray
    state: QuantumState
    trace: list = field(default_factory=list)
    a0: float | None = None


def run_vqe(prepare: Callable, H: PauliHamiltonian, n_params: int, cfg: SpsaConfig,
            shots: int, rng, theta0=None) -> VqeResult:
    """Optimize ``prepare(theta) -> QuantumState`` against shot-estimated energies."""
    estimator = EnergyEstimator(H)

    def objective(theta):
        return estimator.estimate(prepare(theta), shots, rng)[0]

    theta0 = np.zeros(n_params) if theta0 is None else np.asarray(theta0, dtype=float)
    calib: list[SpsaRecord] = []
    if cfg.calibrate:
        cfg = replace(cfg, a0=spsa_calibrate(objective, theta0, cfg, rng, calib), calibrate=False)
    theta, trace = spsa_minimize(objective, theta0, cfg, rng)
    for rec in trace:
        rec.evaluation += len(calib)
    return VqeResult(theta, prepare(theta), calib + trace, cfg.a0)
