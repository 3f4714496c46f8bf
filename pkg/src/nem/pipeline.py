"""End-to-end runs: VQE -> measurement data -> NQST -> VMC, with per-stage metrics.

Configuration is a JSON tree; ``resolve_config`` fills in the defaults for
the problem family and validates every block by building the typed configs.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nqs, nqst, vmc
from .exact import LanczosConvergenceError, exact_ground_state
from .nqs import TransformerConfig
from .observables import order_parameter, order_parameter_diagonal, purity, renyi2_entropy
from .pauli import PauliHamiltonian, SchwingerParams, bits_to_index, build_schwinger, load_hamiltonian
from .simulator import CapabilityError, QuantumState
from .vqe import (
    ChemistryCircuitSpec,
    SchwingerCircuitSpec,
    SpsaAborted,
    SpsaConfig,
    chemistry_circuit,
    run_vqe,
    schwinger_circuit,
    write_spsa_trace,
)

log = logging.getLogger(__name__)

STAGES = ("vqe", "nqst", "vmc")
METRICS = ("energy", "energy_error", "infidelity", "order_parameter", "renyi2", "purity")
MAX_ENUMERATED_METRICS = 12
NUMERICAL_ERRORS = (FloatingPointError, LanczosConvergenceError, SpsaAborted, np.linalg.LinAlgError)


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration


def _schwinger_small_defaults():
    return {
        "vqe": {"iterations": 200, "shots": 512, "a0": 0.1, "c0": 0.1, "alpha": 0.602, "gamma": 0.101,
                "A": 10.0, "calibrate": False},
        "nqs": {"layers": 2, "heads": 4, "model_dim": 8, "scale_attention": False},
        "nqst": {"shots_per_basis": 512, "batch_size": 512, "lr": 1e-2, "epochs": 50, "val_fraction": 0.1},
        "vmc": {"iterations": 400, "batch": 512, "lr": 1e-2, "lr_drops": [], "lr_drop_factor": 10.0,
                "reg_eps": 0.1, "reg_iterations": 200, "reg_schedule": "step"},
    }


def _schwinger_large_defaults(n):
    d = _schwinger_small_defaults()
    d["vqe"].update(shots=1024, A=20.0)
    d["nqs"]["model_dim"] = 12
    d["nqst"].update(lr=1e-3, epochs=30)
    d["vmc"].update(iterations=3200, batch=1024, lr=3e-3, lr_drops=[1600, 2400], reg_eps=25.6 / 2**n,
                    reg_iterations=1000, reg_schedule="linear")
    return d


def _chemistry_defaults(n):
    small = n <= 2
    return {
        "vqe": {"iterations": 250, "shots": 1024, "a0": 0.1, "c0": 0.1, "alpha": 0.602, "gamma": 0.101,
                "A": 0.0, "calibrate": True},
        "nqs": {"layers": 2, "heads": 4, "model_dim": 8, "scale_attention": False},
        "nqst": {"shots_per_basis": 300 if small else 500, "batch_size": 128, "lr": 1e-2, "epochs": 100,
                 "val_fraction": 0.1},
        "vmc": {"iterations": 1000 if small else 1200, "batch": 256, "lr": 1e-2, "lr_drops": [],
                "lr_drop_factor": 10.0, "reg_eps": 0.05, "reg_iterations": 600, "reg_schedule": "step"},
    }


SCHWINGER_PROBLEM = {"kind": "schwinger", "n_sites": 8, "mass": -0.7, "noise": 0.001, "mode": "analog",
                     "w": 1.0, "g_bar": 1.0, "epsilon0": 0.0, "layers": 3, "entangler_sign": 1}
FILE_PROBLEM = {"kind": "hamiltonian-file", "path": None, "depth": 1, "single_qubit_noise": 0.001,
                "two_qubit_noise": 0.01}


def _merge(base: dict, update: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if k not in out:
            raise ConfigError(f"unknown config key {where}{k}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _file_qubits(path: Path) -> int:
    for raw in path.read_text().splitlines():
        parts = raw.split()
        if parts and not parts[0].startswith("#"):
            if parts[0] == "qubits" and len(parts) == 2 and parts[1].isdigit():
                return int(parts[1])
            break
    raise ConfigError(f"{path}: missing 'qubits <N>' header")


def resolve_config(user: dict, base_dir: str | Path | None = None) -> dict:
    """Merge ``user`` over the family defaults and validate everything."""
    user = copy.deepcopy(user or {})
    user.pop("n_qubits", None)  # derived; present when re-resolving a report's config
    problem_in = user.pop("problem", {}) or {}
    kind = problem_in.get("kind", "schwinger")
    if kind == "schwinger":
        problem = _merge(SCHWINGER_PROBLEM, problem_in, "problem.")
        n = int(problem["n_sites"])
        if n < 2 or n % 2:
            raise ConfigError("problem.n_sites must be a positive even integer")
        if n > 8 and "mode" not in problem_in:
            problem["mode"] = "scaling"
        if problem["mode"] == "scaling" and "noise" not in problem_in:
            problem["noise"] = 0.0
        defaults = _schwinger_small_defaults() if n <= 8 else _schwinger_large_defaults(n)
    elif kind == "hamiltonian-file":
        problem = _merge(FILE_PROBLEM, problem_in, "problem.")
        if not problem["path"]:
            raise ConfigError("problem.path is required for a hamiltonian-file problem")
        path = Path(problem["path"])
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        if not path.is_file():
            raise ConfigError(f"Hamiltonian file {path} does not exist")
        problem["path"] = str(path)
        n = _file_qubits(path)
        defaults = _chemistry_defaults(n)
    else:
        raise ConfigError(f"unknown problem kind {kind!r}")
    defaults["metrics"] = {"renyi_k": max(1, n // 2 - 1)}
    cfg = {"problem": problem, **defaults, "seed": 0}
    cfg = _merge(cfg, user, "")
    cfg["n_qubits"] = n
    _validate(cfg)
    return cfg


def spsa_config(cfg) -> SpsaConfig:
    v = {k: x for k, x in cfg["vqe"].items() if k != "shots"}
    return SpsaConfig(**v)


def nqst_config(cfg) -> nqst.NqstConfig:
    v = {k: x for k, x in cfg["nqst"].items() if k != "shots_per_basis"}
    return nqst.NqstConfig(**v)


def vmc_config(cfg) -> vmc.VmcConfig:
    return vmc.VmcConfig(**cfg["vmc"])


def transformer_config(cfg, seed: int) -> TransformerConfig:
    return TransformerConfig(n_qubits=cfg["n_qubits"], seed=seed, **cfg["nqs"])


def _validate(cfg):
    try:
        seed = int(cfg["seed"])
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        spsa_config(cfg)
        nqst_config(cfg)
        vmc_config(cfg)
        transformer_config(cfg, 0)
        if cfg["vqe"]["shots"] < 1 or cfg["nqst"]["shots_per_basis"] < 1:
            raise ValueError("shot counts must be positive")
        if not 1 <= cfg["metrics"]["renyi_k"] < cfg["n_qubits"]:
            raise ValueError("metrics.renyi_k must lie in [1, N)")
        p = cfg["problem"]
        if p["kind"] == "schwinger":
            _circuit_spec(cfg)
            if not 0.0 <= p["noise"] <= 1.0:
                raise ValueError("problem.noise must lie in [0, 1]")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def parse_override(text: str):
    """``a.b.c=value`` -> (["a","b","c"], parsed value); values parse as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(user: dict, overrides) -> dict:
    user = copy.deepcopy(user)
    for text in overrides or ():
        keys, value = parse_override(text)
        node = user
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r} descends into a non-object")
        node[keys[-1]] = value
    return user


def load_config(path=None, overrides=(), seed=None) -> dict:
    user, base = {}, None
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        base = path.parent
    user = apply_overrides(user, overrides)
    if seed is not None:
        user["seed"] = seed
    return resolve_config(user, base)


# --------------------------------------------------------------------------
# problem setup


def build_hamiltonian(cfg) -> PauliHamiltonian:
    p = cfg["problem"]
    if p["kind"] == "schwinger":
        return build_schwinger(SchwingerParams(p["n_sites"], p["mass"], p["w"], p["g_bar"], p["epsilon0"]))
    return load_hamiltonian(p["path"])


def _circuit_spec(cfg):
    p = cfg["problem"]
    if p["kind"] == "schwinger":
        return SchwingerCircuitSpec(p["n_sites"], layers=p["layers"], noise=p["noise"], mode=p["mode"],
                                    entangler_sign=p["entangler_sign"])
    return ChemistryCircuitSpec(cfg["n_qubits"], p["depth"], p["single_qubit_noise"], p["two_qubit_noise"])


def make_preparer(cfg):
    spec = _circuit_spec(cfg)
    if isinstance(spec, SchwingerCircuitSpec):
        mass = cfg["problem"]["mass"]
        return spec.n_params, lambda theta: schwinger_circuit(spec, theta, mass)
    return spec.n_params, lambda theta: chemistry_circuit(spec, theta)


def measurement_family(cfg) -> str:
    return "schwinger" if cfg["problem"]["kind"] == "schwinger" else "chemistry"


@dataclass
class ExactReference:
    energy: float
    state: np.ndarray
    order_parameter: float | None
    renyi2: float


def exact_reference(cfg, H) -> ExactReference:
    e0, psi0 = exact_ground_state(H)
    k = cfg["metrics"]["renyi_k"]
    op = order_parameter(psi0) if cfg["problem"]["kind"] == "schwinger" else None
    return ExactReference(e0, psi0, op, renyi2_entropy(psi0, k))


def seed_streams(seed: int):
    names = ("vqe", "sample", "nqst", "init", "vmc")
    return dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))


# --------------------------------------------------------------------------
# metrics


def state_metrics(state, H: PauliHamiltonian, ref: ExactReference, cfg) -> dict:
    """Exact metrics of a statevector or density matrix against the reference."""
    state = np.asarray(state)
    hs = H.matvec(state)
    if state.ndim == 1:
        energy = np.vdot(state, hs).real
        fid = abs(np.vdot(ref.state, state)) ** 2
    else:
        energy = np.trace(hs).real
        fid = np.vdot(ref.state, state @ ref.state).real
    return {
        "energy": float(energy),
        "energy_error": float(energy - ref.energy),
        "infidelity": float(min(1.0, max(0.0, 1.0 - fid))),
        "order_parameter": float(order_parameter(state)) if ref.order_parameter is not None else None,
        "renyi2": float(renyi2_entropy(state, cfg["metrics"]["renyi_k"])),
        "purity": float(purity(state)),
    }


def sampled_nqs_metrics(params, H, ref: ExactReference, cfg, rng, batch=8192) -> dict:
    """Monte Carlo metrics for models too large to enumerate; carries standard errors."""
    bits, counts = nqs.sample_counts(params, batch, rng)
    w = counts / batch
    hloc, ok = vmc.local_energies(params, H, bits)
    energy = float(w @ hloc.real)
    e_se = float(np.sqrt(max(w @ (hloc.real - energy) ** 2, 0.0) / batch))
    logpsi = nqs.log_psi(params, bits)
    ratio = ref.state[bits_to_index(bits)] / np.exp(logpsi)
    ov = w @ ratio
    fid = abs(ov) ** 2
    f_se = float(2 * abs(ov) * np.sqrt(max(w @ np.abs(ratio - ov) ** 2, 0.0) / batch))
    out = {"energy": energy, "energy_error": energy - ref.energy, "infidelity": float(min(1.0, max(0.0, 1 - fid))),
           "order_parameter": None, "renyi2": None, "purity": 1.0,
           "stderr": {"energy": e_se, "infidelity": f_se}}
    if ref.order_parameter is not None:
        diag = order_parameter_diagonal(cfg["n_qubits"])[bits_to_index(bits)]
        out["order_parameter"] = float(w @ diag)
        out["stderr"]["order_parameter"] = float(np.sqrt(w @ (diag - out["order_parameter"]) ** 2 / batch))
    return out


def nqs_metrics(params, H, ref, cfg, rng) -> dict:
    if cfg["n_qubits"] <= MAX_ENUMERATED_METRICS:
        return state_metrics(nqs.statevector(params), H, ref, cfg)
    return sampled_nqs_metrics(params, H, ref, cfg, rng)


# --------------------------------------------------------------------------
# reports


@dataclass
class PipelineReport:
    tag: str
    seed: int
    config_hash: str
    config: dict
    exact: dict
    stages: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    failure: dict | None = None
    traces: dict = field(default_factory=dict, repr=False)
    checkpoints: dict = field(default_factory=dict, repr=False)
    timings: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"tag": self.tag, "seed": self.seed, "config_hash": self.config_hash, "config": self.config,
                "exact": self.exact, "stages": self.stages, "extras": self.extras, "failure": self.failure,
                "checkpoints": {k: f"{k}.ckpt" for k in self.checkpoints}}

    @property
    def ok(self) -> bool:
        return self.failure is None


def _new_report(cfg, tag, ref: ExactReference | None) -> PipelineReport:
    exact = {}
    if ref is not None:
        exact = {"energy": ref.energy, "order_parameter": ref.order_parameter, "renyi2": ref.renyi2}
    return PipelineReport(tag, int(cfg["seed"]), config_hash(cfg), copy.deepcopy(cfg), exact)


def _fail(report, stage, exc):
    log.error("stage %s failed: %s", stage, exc)
    report.failure = {"stage": stage, "error": type(exc).__name__, "message": str(exc)}
    return report


def run_pipeline(cfg: dict) -> PipelineReport:
    """VQE -> samples -> NQST -> VMC. Failures produce a partial report with a failure record."""
    H = build_hamiltonian(cfg)
    ref = exact_reference(cfg, H)
    report = _new_report(cfg, "nem", ref)
    seeds = seed_streams(int(cfg["seed"]))
    stage = "vqe"
    try:
        t0 = time.perf_counter()
        n_params, prepare = make_preparer(cfg)
        res = run_vqe(prepare, H, n_params, spsa_config(cfg), cfg["vqe"]["shots"],
                      np.random.default_rng(seeds["vqe"]))
        report.traces["vqe"] = res.trace
        report.stages["vqe"] = state_metrics(res.state.data, H, ref, cfg)
        report.extras["vqe_a0"] = res.a0
        report.extras["vqe_theta"] = [float(x) for x in res.theta]
        report.timings["vqe"] = time.perf_counter() - t0

        stage = "nqst"
        t0 = time.perf_counter()
        ds = nqst.make_dataset(res.state, measurement_family(cfg), cfg["nqst"]["shots_per_basis"],
                               np.random.default_rng(seeds["sample"]), {"seed": int(cfg["seed"])})
        init = nqs.init_params(transformer_config(cfg, int(seeds["init"].generate_state(1)[0])))
        fit = nqst.train_nqst(init, ds, nqst_config(cfg), np.random.default_rng(seeds["nqst"]))
        report.traces["nqst"] = fit.trace
        report.checkpoints["nqst"] = fit.params
        report.stages["nqst"] = nqs_metrics(fit.params, H, ref, cfg, np.random.default_rng(seeds["nqst"]))
        report.extras.update(nqst_best_epoch=fit.best_epoch, nqst_records=len(ds))
        if cfg["n_qubits"] <= MAX_ENUMERATED_METRICS and res.state.n_qubits <= MAX_ENUMERATED_METRICS:
            # sanity floor: the fit should resemble its data source far more than a random state
            psi = nqs.statevector(fit.params)
            rnd = np.random.default_rng(seeds["nqst"].spawn(1)[0])
            r = rnd.standard_normal(psi.size) + 1j * rnd.standard_normal(psi.size)
            r /= np.linalg.norm(r)
            report.extras["nqst_fidelity_to_vqe"] = _fid(res.state, psi)
            report.extras["random_fidelity_to_vqe"] = _fid(res.state, r)
        report.timings["nqst"] = time.perf_counter() - t0

        stage = "vmc"
        t0 = time.perf_counter()
        out = vmc.train_vmc(fit.params, H, vmc_config(cfg), np.random.default_rng(seeds["vmc"]))
        report.traces["vmc"] = out.trace
        report.checkpoints["vmc"] = out.params
        report.stages["vmc"] = nqs_metrics(out.params, H, ref, cfg, np.random.default_rng(seeds["vmc"]))
        report.timings["vmc"] = time.perf_counter() - t0
    except NUMERICAL_ERRORS + (CapabilityError,) as exc:
        if hasattr(exc, "trace"):
            report.traces[stage] = exc.trace
        return _fail(report, stage, exc)
    return report


def _fid(state: QuantumState, psi) -> float:
    if state.is_pure:
        return float(abs(np.vdot(psi, state.data)) ** 2)
    return float(np.vdot(psi, state.data @ psi).real)


def run_standalone_vmc(cfg: dict) -> PipelineReport:
    """VMC from a randomly initialized model with the same NQS and VMC settings."""
    H = build_hamiltonian(cfg)
    ref = exact_reference(cfg, H)
    report = _new_report(cfg, "standalone", ref)
    seeds = seed_streams(int(cfg["seed"]))
    try:
        t0 = time.perf_counter()
        init = nqs.init_params(transformer_config(cfg, int(seeds["init"].generate_state(1)[0])))
        out = vmc.train_vmc(init, H, vmc_config(cfg), np.random.default_rng(seeds["vmc"]))
        report.traces["vmc"] = out.trace
        report.checkpoints["vmc"] = out.params
        report.stages["vmc"] = nqs_metrics(out.params, H, ref, cfg, np.random.default_rng(seeds["vmc"]))
        report.timings["vmc"] = time.perf_counter() - t0
    except NUMERICAL_ERRORS as exc:
        if hasattr(exc, "trace"):
            report.traces["vmc"] = exc.trace
        return _fail(report, "vmc", exc)
    return report


def _fmt(x):
    if x is None:
        return ""
    return repr(float(x))


def emit_report(report: PipelineReport, out_dir) -> Path:
    """report.json, metrics.csv, traces/*.csv, checkpoints; timings go to a separate file."""
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("stage",) + METRICS)
        for stage in STAGES:
            if stage in report.stages:
                w.writerow((stage,) + tuple(_fmt(report.stages[stage][m]) for m in METRICS))
    if "vqe" in report.traces:
        write_spsa_trace(report.traces["vqe"], out / "traces" / "vqe.csv")
    if "nqst" in report.traces:
        with open(out / "traces" / "nqst.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch", "train_loss", "val_loss", "clamped"))
            for r in report.traces["nqst"]:
                w.writerow((r["epoch"], _fmt(r["train_loss"]), _fmt(r["val_loss"]), r["clamped"]))
    if "vmc" in report.traces:
        vmc.write_vmc_trace(report.traces["vmc"], out / "traces" / "vmc.csv")
    for name, params in report.checkpoints.items():
        nqs.save_checkpoint(params, out / f"{name}.ckpt")
    (out / "timings.json").write_text(json.dumps(report.timings, sort_keys=True, indent=2) + "\n")
    return out / "report.json"


def load_report(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return json.loads(path.read_text())


def report_digest(path) -> str:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# sweeps and aggregation


def quartile_band(values):
    """(median, low, high). Ten runs: the band spans the middle six; otherwise 25th-75th percentiles."""
    v = np.sort(np.asarray([x for x in values if x is not None], dtype=float))
    if v.size == 0:
        return None, None, None
    med = float(np.median(v))
    if v.size == 10:
        return med, float(v[2]), float(v[7])
    return med, float(np.percentile(v, 25)), float(np.percentile(v, 75))


def aggregate(reports: list[dict]) -> list[dict]:
    rows = []
    groups: dict[tuple, list[dict]] = {}
    for r in reports:
        cfg = dict(r["config"])
        cfg.pop("seed", None)
        groups.setdefault((r["tag"], config_hash(cfg)), []).append(r)
    for (tag, chash), members in sorted(groups.items()):
        for stage in STAGES:
            for metric in METRICS:
                vals = [m["stages"].get(stage, {}).get(metric) for m in members if stage in m["stages"]]
                med, lo, hi = quartile_band(vals)
                if med is None:
                    continue
                rows.append({"tag": tag, "config": chash, "stage": stage, "metric": metric,
                             "n": sum(v is not None for v in vals), "median": med, "low": lo, "high": hi})
    return rows


AGGREGATE_COLUMNS = ("tag", "config", "stage", "metric", "n", "median", "low", "high")


def write_aggregate(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=AGGREGATE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (_fmt(r[k]) if k in ("median", "low", "high") else r[k]) for k in AGGREGATE_COLUMNS})


def _sweep_job(args):
    cfg, tag, out_dir = args
    fn = run_standalone_vmc if tag == "standalone" else run_pipeline
    report = fn(cfg)
    emit_report(report, out_dir)
    return str(out_dir), report.ok


def run_sweep(cfg: dict, seeds, out_dir, *, standalone: bool = False, workers: int = 1):
    """Independent runs per seed (and paired standalone runs if asked) plus aggregate.csv."""
    out = Path(out_dir)
    jobs = []
    for s in seeds:
        c = dict(copy.deepcopy(cfg), seed=int(s))
        jobs.append((c, "nem", out / f"nem_seed{s}"))
        if standalone:
            jobs.append((c, "standalone", out / f"standalone_seed{s}"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_sweep_job, jobs))
    else:
        done = [_sweep_job(j) for j in jobs]
    reports = [load_report(d) for d, _ in done]
    write_aggregate(aggregate(reports), out / "aggregate.csv")
    if standalone:
        write_paired(reports, out / "paired.csv")
    return done


def write_paired(reports, path) -> None:
    by = {(r["tag"], r["seed"]): r for r in reports}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "nem_infidelity", "standalone_infidelity", "nem_energy_error",
                    "standalone_energy_error"))
        for seed in sorted({s for _, s in by}):
            a = by.get(("nem", seed), {}).get("stages", {}).get("vmc", {})
            b = by.get(("standalone", seed), {}).get("stages", {}).get("vmc", {})
            w.writerow((seed, _fmt(a.get("infidelity")), _fmt(b.get("infidelity")), _fmt(a.get("energy_error")),
                        _fmt(b.get("energy_error"))))
