"""Autoregressive Transformer wavefunction.

``<s|psi> = sqrt(p(s)) exp(i phi(s))`` with ``p`` factorized into conditionals
``p(s_n = 1 | s_<n) = sigmoid(l_{n-1})``. Everything is batched over
bitstrings and written directly in numpy; the reverse pass below is the
gradient engine used by tomography and VMC.

Layout per layer (sequence positions n = 0..N, prefix token 0 at n = 0)::

    i = e + f
    a = i + relu(O @ attn(LN1(i)))
    e = a + relu(W @ LN2(a) + b)
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .pauli import all_bitstrings

log = logging.getLogger(__name__)

LN_EPS = 1e-5
INIT_SCALE = 0.1
MAX_ENUMERATION_QUBITS = 16
_NEG = -1e300


class NonFiniteError(FloatingPointError):
    """Raised when a forward or backward intermediate is NaN/inf."""

    def __init__(self, where: str):
        super().__init__(f"non-finite values in {where}")
        self.where = where


@dataclass(frozen=True)
class TransformerConfig:
    n_qubits: int
    layers: int = 2
    heads: int = 4
    model_dim: int = 8
    seed: int = 0
    scale_attention: bool = False

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        if self.layers < 0 or self.heads < 1 or self.model_dim < 1:
            raise ValueError("layers >= 0, heads >= 1 and model_dim >= 1 required")
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def seq_len(self) -> int:
        return self.n_qubits + 1


def parameter_shapes(cfg: TransformerConfig) -> dict[str, tuple[int, ...]]:
    D, T, H = cfg.model_dim, cfg.seq_len, cfg.heads
    shapes: dict[str, tuple[int, ...]] = {"embed": (2, D), "pos": (T, D)}
    for k in range(cfg.layers):
        p = f"layer{k}."
        shapes[p + "ln1.g"] = (D,)
        shapes[p + "ln1.b"] = (D,)
        for name in "QKV":
            shapes[p + name] = (H, cfg.head_dim, D)
        shapes[p + "O"] = (D, D)
        shapes[p + "ln2.g"] = (D,)
        shapes[p + "ln2.b"] = (D,)
        shapes[p + "W"] = (D, D)
        shapes[p + "b"] = (D,)
    shapes["logit.w"] = (D,)
    shapes["logit.b"] = (1,)
    shapes["phase.w"] = (T * D,)
    shapes["phase.b"] = (1,)
    return shapes


@dataclass
class NqsParameters:
    """Flat parameter vector plus the map from block name to (offset, shape)."""

    config: TransformerConfig
    flat: np.ndarray
    layout: dict[str, tuple[int, tuple[int, ...]]] = field(init=False, repr=False)

    def __post_init__(self):
        self.layout = _layout(self.config)
        n = n_parameters(self.config)
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (n,):
            raise ValueError(f"expected {n} parameters, got shape {self.flat.shape}")

    def block(self, name: str) -> np.ndarray:
        off, shape = self.layout[name]
        return self.flat[off : off + int(np.prod(shape))].reshape(shape)

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: self.block(name) for name in self.layout}

    def copy(self) -> "NqsParameters":
        return NqsParameters(self.config, self.flat.copy())

    def __len__(self):
        return self.flat.size


def _layout(cfg):
    out, off = {}, 0
    for name, shape in parameter_shapes(cfg).items():
        out[name] = (off, shape)
        off += int(np.prod(shape))
    return out


def n_parameters(cfg: TransformerConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(cfg).values())


def block_slices(cfg: TransformerConfig) -> dict[str, slice]:
    return {name: slice(off, off + int(np.prod(shape))) for name, (off, shape) in _layout(cfg).items()}


def init_params(cfg: TransformerConfig, seed: int | None = None) -> NqsParameters:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = NqsParameters(cfg, np.zeros(n_parameters(cfg)))
    for name, (off, shape) in params.layout.items():
        size = int(np.prod(shape))
        if name.endswith(".g"):
            params.flat[off : off + size] = 1.0
        elif name.endswith(".b"):
            continue  # biases and layer-norm shifts start at zero
        else:
            params.flat[off : off + size] = rng.uniform(-INIT_SCALE, INIT_SCALE, size)
    return params


# --------------------------------------------------------------------------
# forward / backward


def _check(x, where):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(where)


def _layernorm(x, g, b):
    # activations are (D, T, B); normalize over the feature axis 0
    mu = x.mean(axis=0)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=0) + LN_EPS)
    xhat = xc * rstd
    return xhat * g[:, None, None] + b[:, None, None], (xhat, rstd)


def _layernorm_backward(dy, g, cache):
    xhat, rstd = cache
    D = dy.shape[0]
    dg = (dy * xhat).reshape(D, -1).sum(axis=1)
    db = dy.reshape(D, -1).sum(axis=1)
    dxh = dy * g[:, None, None]
    dx = rstd * (dxh - dxh.mean(axis=0) - xhat * (dxh * xhat).mean(axis=0))
    return dx, dg, db


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _additive_mask(T):
    # 0 where key position m <= query position n, -inf above the diagonal
    m = np.zeros((T, T))
    m[np.triu_indices(T, 1)] = -np.inf
    return m[None, :, :, None]


def _pair_dot(x, y):
    """``out[h, n, m, b] = sum_i x[h, i, n, b] y[h, i, m, b]``."""
    out = np.multiply(x[:, 0, :, None, :], y[:, 0, None, :, :])
    if x.shape[1] > 1:
        tmp = np.empty_like(out)
        for i in range(1, x.shape[1]):
            out += np.multiply(x[:, i, :, None, :], y[:, i, None, :, :], out=tmp)
    return out


def _contract_keys(w, y):
    """``out[h, i, n, b] = sum_m w[h, n, m, b] y[h, i, m, b]``."""
    return np.einsum("hnmb,himb->hinb", w, y)


def _contract_queries(w, x):
    """``out[h, i, m, b] = sum_n w[h, n, m, b] x[h, i, n, b]``."""
    return np.stack([(w * x[:, i, :, None, :]).sum(axis=1) for i in range(x.shape[1])], axis=1)


def _as_bits(params: NqsParameters, bits) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.ndim == 1:
        bits = bits[None, :]
    if bits.ndim != 2 or bits.shape[1] != params.config.n_qubits:
        raise ValueError(f"expected bitstrings of length {params.config.n_qubits}, got shape {bits.shape}")
    return bits.astype(np.int8)


def forward(params: NqsParameters, bits, *, keep_cache: bool = False, logits_only: bool = False):
    """Return ``(log_prob, phase)`` arrays of shape (B,), plus a cache if asked.

    With ``logits_only`` the raw logits (B, N) are returned instead; used for
    sampling where the heads beyond the conditionals are irrelevant.
    Internally every activation is laid out batch-last, (D, T, B).
    """
    cfg = params.config
    bits = _as_bits(params, bits)
    B, N = bits.shape
    T, D, H, dk = cfg.seq_len, cfg.model_dim, cfg.heads, cfg.head_dim
    P = params.blocks()
    tokens = np.concatenate([np.zeros((1, B), dtype=np.int8), bits.T], axis=0)  # (T, B)
    e = P["embed"].T[:, tokens]
    mask = _additive_mask(T)
    scale = 1.0 / np.sqrt(dk) if cfg.scale_attention else 1.0
    caches = []
    for k in range(cfg.layers):
        p = f"layer{k}."
        i = e + P["pos"].T[:, :, None]
        u, ln1 = _layernorm(i, P[p + "ln1.g"], P[p + "ln1.b"])
        wqkv = np.concatenate([P[p + c].reshape(D, D) for c in "QKV"])
        qkv = (wqkv @ u.reshape(D, T * B)).reshape(3, H, dk, T, B)
        q, kk, v = qkv[0], qkv[1], qkv[2]
        s = _pair_dot(q, kk)
        if scale != 1.0:
            s *= scale
        s += mask
        s -= s.max(axis=2, keepdims=True)
        w = np.exp(s)
        w /= w.sum(axis=2, keepdims=True)
        z = _contract_keys(w, v).reshape(D, T * B)
        o = (P[p + "O"] @ z).reshape(D, T, B)
        a = i + np.maximum(o, 0.0)
        u2, ln2 = _layernorm(a, P[p + "ln2.g"], P[p + "ln2.b"])
        lin = (P[p + "W"] @ u2.reshape(D, T * B)).reshape(D, T, B) + P[p + "b"][:, None, None]
        e = a + np.maximum(lin, 0.0)
        _check(e, f"forward layer {k}")
        if keep_cache:
            caches.append(dict(u=u, ln1=ln1, qkv=qkv, w=w, z=z, o=o, u2=u2, ln2=ln2, lin=lin))
    logits = (P["logit.w"] @ e[:, :N, :].reshape(D, N * B)).reshape(N, B) + P["logit.b"][0]
    if logits_only:
        return logits.T
    log_prob = (bits.T * logits - _softplus(logits)).sum(axis=0)
    phase = P["phase.w"].reshape(T, D).T.reshape(-1) @ e.reshape(D * T, B) + P["phase.b"][0]
    _check(log_prob, "forward output head (log_prob)")
    _check(phase, "forward output head (phase)")
    if not keep_cache:
        return log_prob, phase
    cache = dict(tokens=tokens, bits=bits, logits=logits, e=e, layers=caches, scale=scale)
    return log_prob, phase, cache


def backward(params: NqsParameters, cache, dlogp, dphase) -> np.ndarray:
    """Vector-Jacobian product: gradient of ``sum_b dlogp_b log_prob_b + dphase_b phase_b``.

    Either cotangent may be ``None`` (treated as zero). Returns a flat vector
    laid out like ``params.flat``.
    """
    cfg = params.config
    P = params.blocks()
    tokens, bits, logits, e = cache["tokens"], cache["bits"], cache["logits"], cache["e"]
    B, N = bits.shape
    T, D, H, dk = cfg.seq_len, cfg.model_dim, cfg.heads, cfg.head_dim
    grad = NqsParameters(cfg, np.zeros(params.flat.size))
    G = grad.blocks()

    de = np.zeros_like(e)
    if dlogp is not None:
        dlogp = np.asarray(dlogp, dtype=np.float64).reshape(B)
        dl = dlogp * (bits.T - _sigmoid(logits))  # (N, B)
        G["logit.w"][:] = e[:, :N, :].reshape(D, N * B) @ dl.reshape(-1)
        G["logit.b"][0] = dl.sum()
        de[:, :N, :] += P["logit.w"][:, None, None] * dl
    if dphase is not None:
        dphase = np.asarray(dphase, dtype=np.float64).reshape(B)
        G["phase.w"][:] = (e @ dphase).T.reshape(-1)
        G["phase.b"][0] = dphase.sum()
        de += P["phase.w"].reshape(T, D).T[:, :, None] * dphase

    scale = cache["scale"]
    for k in reversed(range(cfg.layers)):
        p = f"layer{k}."
        c = cache["layers"][k]
        # e = a + relu(lin)
        dlin = (de * (c["lin"] > 0)).reshape(D, T * B)
        G[p + "W"][:] = dlin @ c["u2"].reshape(D, T * B).T
        G[p + "b"][:] = dlin.sum(axis=1)
        du2 = (P[p + "W"].T @ dlin).reshape(D, T, B)
        da, G[p + "ln2.g"][:], G[p + "ln2.b"][:] = _layernorm_backward(du2, P[p + "ln2.g"], c["ln2"])
        da += de
        # a = i + relu(O z)
        do = (da * (c["o"] > 0)).reshape(D, T * B)
        G[p + "O"][:] = do @ c["z"].T
        dz = (P[p + "O"].T @ do).reshape(H, dk, T, B)
        w = c["w"]
        q, kk, v = c["qkv"]
        dw = _pair_dot(dz, v)
        dqkv = np.empty((3, H, dk, T, B))
        dqkv[2] = _contract_queries(w, dz)
        ds = w * (dw - (dw * w).sum(axis=2, keepdims=True))
        if scale != 1.0:
            ds *= scale
        dqkv[0] = _contract_keys(ds, kk)
        dqkv[1] = _contract_queries(ds, q)
        dqkv = dqkv.reshape(3 * D, T * B)
        gqkv = dqkv @ c["u"].reshape(D, T * B).T
        for j, name in enumerate("QKV"):
            G[p + name][:] = gqkv[j * D : (j + 1) * D].reshape(H, dk, D)
        wqkv = np.concatenate([P[p + name].reshape(D, D) for name in "QKV"])
        du = (wqkv.T @ dqkv).reshape(D, T, B)
        di, G[p + "ln1.g"][:], G[p + "ln1.b"][:] = _layernorm_backward(du, P[p + "ln1.g"], c["ln1"])
        di += da
        _check(di, f"backward layer {k}")
        G["pos"][:] += di.sum(axis=2).T
        de = di
    de2 = de.reshape(D, T * B)
    ones = de2 @ tokens.reshape(-1).astype(np.float64)
    G["embed"][1] = ones
    G["embed"][0] = de2.sum(axis=1) - ones
    _check(grad.flat, "backward parameter gradient")
    return grad.flat


def log_prob_and_phase(params: NqsParameters, bits):
    return forward(params, bits)


def log_psi(params: NqsParameters, bits) -> np.ndarray:
    """``ln <s|psi> = log_prob/2 + i phase`` for each row of ``bits``."""
    lp, ph = forward(params, bits)
    return 0.5 * lp + 1j * ph


def grad_log_psi_real(params: NqsParameters, bits, weights) -> np.ndarray:
    """``grad sum_b Re[weights_b ln psi(s_b)]`` for complex ``weights``."""
    weights = np.asarray(weights, dtype=complex)
    _, _, cache = forward(params, bits, keep_cache=True)
    return backward(params, cache, 0.5 * weights.real, -weights.imag)


def conditionals(params: NqsParameters, bits) -> np.ndarray:
    """``p(s_n = 1 | s_<n)`` for n = 1..N, shape (B, N)."""
    return _sigmoid(forward(params, bits, logits_only=True))


def sample_counts(params: NqsParameters, batch: int, rng: np.random.Generator):
    """Exact ancestral sampling returning ``(unique bitstrings, multiplicities)``.

    Bits are drawn one position at a time. Identical prefixes are carried
    once with a count and split binomially, which is the same distribution as
    drawing ``batch`` independent strings but needs far fewer network rows.
    """
    if batch < 1:
        raise ValueError("batch must be at least 1")
    N = params.config.n_qubits
    prefixes = np.zeros((1, N), dtype=np.int8)
    counts = np.array([batch], dtype=np.int64)
    for n in range(N):
        # logit n only sees tokens 0..n, i.e. the bits s_1..s_n drawn so far
        p1 = _sigmoid(forward(params, prefixes, logits_only=True)[:, n])
        ones = rng.binomial(counts, p1)
        zeros = counts - ones
        up = prefixes.copy()
        up[:, n] = 1
        prefixes = np.concatenate([prefixes[zeros > 0], up[ones > 0]])
        counts = np.concatenate([zeros[zeros > 0], ones[ones > 0]])
    return prefixes, counts


def sample(params: NqsParameters, batch: int, rng: np.random.Generator) -> np.ndarray:
    """``batch`` independent draws from p(s), shape (batch, N), in random order."""
    uniq, counts = sample_counts(params, batch, rng)
    return rng.permutation(np.repeat(uniq, counts, axis=0))


def enumerate_amplitudes(params: NqsParameters, chunk: int = 4096):
    """(log_prob, phase) over all 2^N bitstrings in kron (MSB = qubit 0) order."""
    N = params.config.n_qubits
    if N > MAX_ENUMERATION_QUBITS:
        raise ValueError(f"enumeration limited to {MAX_ENUMERATION_QUBITS} qubits")
    allbits = all_bitstrings(N)
    lp, ph = [], []
    for start in range(0, allbits.shape[0], chunk):
        a, b = forward(params, allbits[start : start + chunk])
        lp.append(a)
        ph.append(b)
    return np.concatenate(lp), np.concatenate(ph)


def statevector(params: NqsParameters) -> np.ndarray:
    lp, ph = enumerate_amplitudes(params)
    return np.exp(0.5 * lp + 1j * ph)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray, lr: float):
    """One descent step; returns new ``(state, params)`` without mutating inputs."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("adam_step: shape mismatch between params, grad and state")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    mhat = m / (1 - state.beta1**t)
    vhat = v / (1 - state.beta2**t)
    new = params - lr * mhat / (np.sqrt(vhat) + state.eps)
    return AdamState(m, v, t, state.beta1, state.beta2, state.eps), new


# --------------------------------------------------------------------------
# checkpoints: one JSON header line, then raw little-endian float64


def save_checkpoint(params: NqsParameters, path) -> None:
    header = {"config": asdict(params.config), "n_params": int(params.flat.size)}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(params.flat.astype("<f8").tobytes())


def load_checkpoint(path) -> NqsParameters:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    cfg = TransformerConfig(**header["config"])
    flat = np.frombuffer(raw[nl + 1 :], dtype="<f8").astype(np.float64)
    if flat.size != header["n_params"]:
        raise ValueError(f"checkpoint {path}: expected {header['n_params']} floats, found {flat.size}")
    return NqsParameters(cfg, flat)
