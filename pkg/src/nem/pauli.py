"""Pauli-string algebra and qubit Hamiltonians.

Bit convention used throughout the package: a computational basis state of
``N`` qubits is a bitstring ``s = (s_1, ..., s_N)``; qubit 0 carries ``s_1``
(lattice site 1) and is the most significant bit of the basis index, so the
index of ``s`` is ``sum_j s_j 2**(N-1-j)``.  This matches ``np.kron`` ordering.
``Z|0> = +|0>``, so the Z eigenvalue of qubit ``j`` is ``1 - 2 s_j``.
"""

from __future__ import annotations

import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

PAULI_CHARS = "IXYZ"
COEFF_DROP_TOL = 1e-12
HERMITICITY_TOL = 1e-12

_SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# product table for single-qubit Paulis: (a, b) -> (phase, a*b)
_PRODUCT = {}
for _a in PAULI_CHARS:
    for _b in PAULI_CHARS:
        _m = _SINGLE[_a] @ _SINGLE[_b]
        for _c in PAULI_CHARS:
            for _ph in (1, -1, 1j, -1j):
                if np.allclose(_m, _ph * _SINGLE[_c]):
                    _PRODUCT[_a, _b] = (_ph, _c)


class PauliParseError(ValueError):
    """Malformed Hamiltonian file or Pauli string."""


class HermiticityError(ValueError):
    pass


def bits_to_index(bits) -> np.ndarray:
    """Map bit arrays of shape (..., N) to basis indices (qubit 0 = MSB)."""
    bits = np.asarray(bits, dtype=np.int64)
    n = bits.shape[-1]
    weights = 1 << np.arange(n - 1, -1, -1, dtype=np.int64)
    return bits @ weights


def index_to_bits(index, n_qubits: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    shifts = np.arange(n_qubits - 1, -1, -1, dtype=np.int64)
    return ((index[..., None] >> shifts) & 1).astype(np.uint8)


def all_bitstrings(n_qubits: int) -> np.ndarray:
    return index_to_bits(np.arange(2**n_qubits), n_qubits)


def _popcount(x):
    return np.bitwise_count(np.asarray(x, dtype=np.int64)).astype(np.int64)


@dataclass(frozen=True)
class PauliString:
    """A weighted tensor product of single-qubit Paulis, e.g. ``0.5 * XZIY``."""

    ops: str
    coefficient: complex = 1.0

    def __post_init__(self):
        bad = [c for c in self.ops if c not in PAULI_CHARS]
        if bad:
            raise PauliParseError(f"invalid Pauli character {bad[0]!r} in {self.ops!r}")
        if not np.isfinite(complex(self.coefficient)):
            raise ValueError(f"non-finite coefficient {self.coefficient!r}")

    @property
    def n_qubits(self) -> int:
        return len(self.ops)

    @property
    def weight(self) -> int:
        return sum(c != "I" for c in self.ops)

    def _mask(self, chars) -> int:
        n = len(self.ops)
        m = 0
        for q, c in enumerate(self.ops):
            if c in chars:
                m |= 1 << (n - 1 - q)
        return m

    @property
    def flip_mask(self) -> int:
        """Bits flipped by the operator (X or Y positions)."""
        return self._mask("XY")

    @property
    def sign_mask(self) -> int:
        """Positions contributing a (-1)**bit factor on the input state (Y or Z)."""
        return self._mask("YZ")

    @property
    def n_y(self) -> int:
        return self.ops.count("Y")

    @property
    def is_diagonal(self) -> bool:
        return self.flip_mask == 0

    def phase(self, index):
        """Unit phase ``u`` with ``P|t> = u(t) |t ^ flip_mask>`` (coefficient excluded)."""
        sign = 1 - 2 * (_popcount(np.asarray(index) & self.sign_mask) & 1)
        return (1j) ** self.n_y * sign

    def __mul__(self, other):
        if isinstance(other, PauliString):
            if len(other.ops) != len(self.ops):
                raise ValueError("Pauli strings act on different qubit counts")
            phase = complex(self.coefficient) * complex(other.coefficient)
            out = []
            for a, b in zip(self.ops, other.ops):
                ph, c = _PRODUCT[a, b]
                phase *= ph
                out.append(c)
            return PauliString("".join(out), phase)
        return PauliString(self.ops, complex(self.coefficient) * other)

    __rmul__ = __mul__

    def to_matrix(self) -> np.ndarray:
        mat = np.array([[1.0 + 0j]])
        for c in self.ops:
            mat = np.kron(mat, _SINGLE[c])
        return complex(self.coefficient) * mat


def pauli_apply(P: PauliString, s) -> tuple[np.ndarray, complex]:
    """Return ``(t, c)`` with ``P|s> = c|t>``; ``t`` is a uint8 bit array."""
    s = np.asarray(s, dtype=np.uint8)
    if s.shape != (len(P.ops),):
        raise ValueError(f"bitstring of length {s.shape} does not match {len(P.ops)} qubits")
    n = len(P.ops)
    idx = int(bits_to_index(s))
    t = idx ^ P.flip_mask
    amp = complex(P.coefficient) * complex(P.phase(idx))
    return index_to_bits(t, n), amp


@dataclass
class PauliHamiltonian:
    """Real-weighted sum of Pauli strings plus an identity offset.

    Like terms are merged on construction; terms whose merged coefficient is
    below ``1e-12`` in magnitude are dropped.  All-identity terms are folded
    into ``identity_offset``.
    """

    n_qubits: int
    terms: list = field(default_factory=list)
    identity_offset: float = 0.0

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        acc = defaultdict(complex)
        offset = complex(self.identity_offset)
        for term in self.terms:
            if len(term.ops) != self.n_qubits:
                raise ValueError(
                    f"term {term.ops!r} has {len(term.ops)} qubits, expected {self.n_qubits}"
                )
            if set(term.ops) == {"I"}:
                offset += complex(term.coefficient)
            else:
                acc[term.ops] += complex(term.coefficient)
        merged = []
        for ops in sorted(acc):
            c = acc[ops]
            if abs(c) < COEFF_DROP_TOL:
                continue
            if abs(c.imag) > HERMITICITY_TOL:
                raise HermiticityError(f"term {ops} has non-real coefficient {c}")
            merged.append(PauliString(ops, float(c.real)))
        if abs(offset.imag) > HERMITICITY_TOL:
            raise HermiticityError(f"identity offset {offset} is not real")
        self.terms = merged
        self.identity_offset = float(offset.real)

    @classmethod
    def from_terms(cls, n_qubits: int, terms: Iterable[tuple[complex, str]]):
        return cls(n_qubits, [PauliString(ops, c) for c, ops in terms])

    def __add__(self, other: "PauliHamiltonian") -> "PauliHamiltonian":
        if other.n_qubits != self.n_qubits:
            raise ValueError("qubit count mismatch")
        return PauliHamiltonian(
            self.n_qubits, self.terms + other.terms, self.identity_offset + other.identity_offset
        )

    def as_dict(self) -> dict:
        d = {t.ops: float(np.real(t.coefficient)) for t in self.terms}
        if self.identity_offset != 0.0:
            d["I" * self.n_qubits] = self.identity_offset
        return d

    def __eq__(self, other):
        if not isinstance(other, PauliHamiltonian):
            return NotImplemented
        return self.n_qubits == other.n_qubits and self.as_dict() == other.as_dict()

    def isclose(self, other: "PauliHamiltonian", atol: float = 1e-12) -> bool:
        a, b = self.as_dict(), other.as_dict()
        if self.n_qubits != other.n_qubits or set(a) != set(b):
            return False
        return all(abs(a[k] - b[k]) <= atol for k in a)

    def __len__(self):
        return len(self.terms)

    # -- dense / matrix-free representations ---------------------------------

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def to_dense(self) -> np.ndarray:
        if self.n_qubits > 14:
            raise MemoryError("dense assembly refused above 14 qubits")
        mat = self.identity_offset * np.eye(self.dim, dtype=complex)
        for t in self.terms:
            mat += t.to_matrix()
        return mat

    @cached_property
    def _diag_terms(self):
        return [t for t in self.terms if t.is_diagonal]

    @cached_property
    def _offdiag_groups(self) -> dict[int, list[PauliString]]:
        groups = defaultdict(list)
        for t in self.terms:
            if not t.is_diagonal:
                groups[t.flip_mask].append(t)
        return dict(sorted(groups.items()))

    @property
    def flip_masks(self) -> list[int]:
        return list(self._offdiag_groups)

    def diagonal_elements(self, index) -> np.ndarray:
        """``<s|H|s>`` for basis indices ``s``."""
        index = np.asarray(index, dtype=np.int64)
        out = np.full(index.shape, self.identity_offset, dtype=float)
        for t in self._diag_terms:
            out += float(np.real(t.coefficient)) * np.real(t.phase(index))
        return out

    def offdiagonal_elements(self, mask: int, index) -> np.ndarray:
        """``<s|H|s ^ mask>`` for basis indices ``s`` (terms sharing ``mask`` only)."""
        index = np.asarray(index, dtype=np.int64)
        t_idx = index ^ mask
        out = np.zeros(index.shape, dtype=complex)
        for t in self._offdiag_groups[mask]:
            out += complex(t.coefficient) * t.phase(t_idx)
        return out

    def connected(self, index) -> tuple[np.ndarray, np.ndarray]:
        """Row elements of H for each basis index ``s``.

        Returns ``(t, h)`` of shape ``(len(s), 1 + n_masks)`` with
        ``h[i, k] = <s_i|H|t[i, k]>``; column 0 is the diagonal.
        """
        index = np.atleast_1d(np.asarray(index, dtype=np.int64))
        masks = self.flip_masks
        t = np.empty((index.size, 1 + len(masks)), dtype=np.int64)
        h = np.empty((index.size, 1 + len(masks)), dtype=complex)
        t[:, 0] = index
        h[:, 0] = self.diagonal_elements(index)
        for k, mask in enumerate(masks, start=1):
            t[:, k] = index ^ mask
            h[:, k] = self.offdiagonal_elements(mask, index)
        return t, h

    @cached_property
    def _matvec_tables(self):
        if self.n_qubits > 22:
            raise MemoryError("matrix-free tables refused above 22 qubits")
        idx = np.arange(self.dim, dtype=np.int64)
        diag = self.diagonal_elements(idx)
        # (H psi)[s] = sum_mask <s|H|s^mask> psi[s^mask]
        off = [(mask, self.offdiagonal_elements(mask, idx)) for mask in self.flip_masks]
        return idx, diag, off

    def matvec(self, psi: np.ndarray) -> np.ndarray:
        idx, diag, off = self._matvec_tables
        psi = np.asarray(psi)
        out = diag * psi if psi.ndim == 1 else diag[:, None] * psi
        for mask, elem in off:
            if psi.ndim == 1:
                out = out + elem * psi[idx ^ mask]
            else:
                out = out + elem[:, None] * psi[idx ^ mask]
        return out

    def to_sparse(self):
        import scipy.sparse as sp

        idx, diag, off = self._matvec_tables
        rows = [idx]
        cols = [idx]
        vals = [diag.astype(complex)]
        for mask, elem in off:
            rows.append(idx)
            cols.append(idx ^ mask)
            vals.append(elem)
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.dim, self.dim),
        )


# -- Schwinger model ----------------------------------------------------------


@dataclass(frozen=True)
class SchwingerParams:
    n_sites: int
    mass: float
    w: float = 1.0
    g_bar: float = 1.0
    epsilon0: float = 0.0

    def __post_init__(self):
        if self.n_sites < 2 or self.n_sites % 2:
            raise ValueError(f"Schwinger lattice needs an even number of sites, got {self.n_sites}")


def _single(n: int, q: int, c: str, coeff=1.0) -> PauliString:
    ops = ["I"] * n
    ops[q] = c
    return PauliString("".join(ops), coeff)


def electric_field_terms(p: SchwingerParams, j: int) -> list[PauliString]:
    """Pauli expansion of ``L_j = eps0 - 1/2 sum_{l<=j} (Z_l + (-1)^l)`` (1-based j)."""
    n = p.n_sites
    const = p.epsilon0 - 0.5 * sum((-1) ** l for l in range(1, j + 1))
    terms = [PauliString("I" * n, const)]
    terms += [_single(n, l - 1, "Z", -0.5) for l in range(1, j + 1)]
    return terms


def build_schwinger(p: SchwingerParams) -> PauliHamiltonian:
    """Lattice Schwinger Hamiltonian after Jordan-Wigner, with open boundaries.

    ``H = w/2 sum_j (X_j X_{j+1} + Y_j Y_{j+1}) + m/2 sum_j (-1)^j Z_j + g sum_{j=1}^N L_j^2``
    with sites ``j = 1..N`` living on qubits ``0..N-1``.
    """
    n = p.n_sites
    terms: list[PauliString] = []
    for j in range(n - 1):
        for c in "XY":
            ops = ["I"] * n
            ops[j] = ops[j + 1] = c
            terms.append(PauliString("".join(ops), p.w / 2))
    for j in range(1, n + 1):
        terms.append(_single(n, j - 1, "Z", p.mass / 2 * (-1) ** j))
    for j in range(1, n + 1):
        L = electric_field_terms(p, j)
        for a in L:
            for b in L:
                terms.append(p.g_bar * (a * b))
    return PauliHamiltonian(n, terms)


def entangler_hamiltonian(n: int, J: float = 1.0, B: float = 10.0, alpha: float = 1.0):
    """Long-range XX couplings plus a uniform Z field (trapped-ion entangler)."""
    terms = []
    for j in range(n - 1):
        for k in range(j + 1, n):
            ops = ["I"] * n
            ops[j] = ops[k] = "X"
            terms.append(PauliString("".join(ops), J / abs(j - k) ** alpha))
    terms += [_single(n, j, "Z", B) for j in range(n)]
    return PauliHamiltonian(n, terms)


# -- text I/O -----------------------------------------------------------------


def save_hamiltonian(H: PauliHamiltonian, path) -> None:
    lines = [f"qubits {H.n_qubits}"]
    if H.identity_offset != 0.0:
        lines.append(f"{H.identity_offset!r} {'I' * H.n_qubits}")
    for t in H.terms:
        lines.append(f"{float(np.real(t.coefficient))!r} {t.ops}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_hamiltonian(text: str, source: str = "<string>") -> PauliHamiltonian:
    n_qubits = None
    terms = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if n_qubits is None:
            if len(fields) != 2 or fields[0] != "qubits":
                raise PauliParseError(f"{source}:{lineno}: expected header 'qubits <N>'")
            try:
                n_qubits = int(fields[1])
            except ValueError:
                raise PauliParseError(f"{source}:{lineno}: bad qubit count {fields[1]!r}") from None
            if n_qubits < 1:
                raise PauliParseError(f"{source}:{lineno}: qubit count must be positive")
            continue
        if len(fields) != 2:
            raise PauliParseError(f"{source}:{lineno}: expected '<coefficient> <pauli string>'")
        try:
            coeff = complex(fields[0].replace("i", "j"))
        except ValueError:
            raise PauliParseError(f"{source}:{lineno}: bad coefficient {fields[0]!r}") from None
        ops = fields[1].upper()
        for c in ops:
            if c not in PAULI_CHARS:
                raise PauliParseError(f"{source}:{lineno}: invalid Pauli character {c!r}")
        if len(ops) != n_qubits:
            raise PauliParseError(
                f"{source}:{lineno}: Pauli string has {len(ops)} characters, expected {n_qubits}"
            )
        if not (math.isfinite(coeff.real) and math.isfinite(coeff.imag)):
            raise PauliParseError(f"{source}:{lineno}: non-finite coefficient")
        terms.append(PauliString(ops, coeff))
    if n_qubits is None:
        raise PauliParseError(f"{source}: empty Hamiltonian file")
    return PauliHamiltonian(n_qubits, terms)


def load_hamiltonian(path) -> PauliHamiltonian:
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        return parse_hamiltonian(fh.read(), source=path)
