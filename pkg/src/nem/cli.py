"""Command-line entry point: ``nem <subcommand> [--config C] [--seed S] [--out DIR] [--override k=v]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import nqs, nqst, pipeline, vmc
from .pipeline import ConfigError, NUMERICAL_ERRORS
from .simulator import CapabilityError, QuantumState
from .vqe import run_vqe, write_spsa_trace

log = logging.getLogger("nem")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--seed", type=_u64, help="overrides the config seed")
    p.add_argument("--out", type=Path, default=Path("nem-out"), help="output directory")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. vmc.batch=256 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nem", description="noisy VQE -> NQS tomography -> VMC refinement")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("exact", help="exact ground state and observables"))
    _common(sub.add_parser("vqe", help="run the noisy VQE stage; writes vqe_state.npy"))
    p = sub.add_parser("sample", help="measure a VQE state in the family bases; writes dataset.txt")
    _common(p)
    p.add_argument("--state", type=Path, help="vqe_state.npy (runs VQE first if omitted)")
    p = sub.add_parser("nqst", help="fit the NQS to a measurement dataset; writes nqst.ckpt")
    _common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p = sub.add_parser("vmc", help="VMC refinement of a checkpoint (random init if omitted)")
    _common(p)
    p.add_argument("--checkpoint", type=Path)
    _common(sub.add_parser("pipeline", help="full VQE -> NQST -> VMC run"))
    _common(sub.add_parser("standalone-vmc", help="VMC from random initialization"))
    p = sub.add_parser("sweep", help="independent runs over seeds plus aggregate.csv")
    _common(p)
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma list or a:b range")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--standalone", action="store_true", help="also run paired standalone VMC")
    p = sub.add_parser("report", help="aggregate existing run directories")
    p.add_argument("runs", nargs="+", type=Path, help="run directories or report.json files")
    p.add_argument("--out", type=Path, help="write aggregate.csv here (prints otherwise)")
    return ap


def _seeds(text: str) -> list[int]:
    if ":" in text:
        a, b = text.split(":")
        return list(range(int(a), int(b)))
    return [int(s) for s in text.split(",") if s.strip()]


def _cfg(args):
    return pipeline.load_config(args.config, args.override, args.seed)


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def cmd_exact(args):
    cfg = _cfg(args)
    H = pipeline.build_hamiltonian(cfg)
    ref = pipeline.exact_reference(cfg, H)
    out = {"energy": ref.energy, "order_parameter": ref.order_parameter, "renyi2": ref.renyi2,
           "config_hash": pipeline.config_hash(cfg)}
    _write_json(args.out / "exact.json", out)
    print(json.dumps(out, sort_keys=True))


def _vqe(cfg):
    H = pipeline.build_hamiltonian(cfg)
    n_params, prepare = pipeline.make_preparer(cfg)
    seeds = pipeline.seed_streams(int(cfg["seed"]))
    res = run_vqe(prepare, H, n_params, pipeline.spsa_config(cfg), cfg["vqe"]["shots"],
                  np.random.default_rng(seeds["vqe"]))
    return H, res


def cmd_vqe(args):
    cfg = _cfg(args)
    H, res = _vqe(cfg)
    ref = pipeline.exact_reference(cfg, H)
    args.out.mkdir(parents=True, exist_ok=True)
    np.save(args.out / "vqe_state.npy", res.state.data)
    write_spsa_trace(res.trace, args.out / "vqe_trace.csv")
    metrics = pipeline.state_metrics(res.state.data, H, ref, cfg)
    _write_json(args.out / "vqe.json", {"metrics": metrics, "theta": list(map(float, res.theta)), "a0": res.a0})
    print(json.dumps(metrics, sort_keys=True))


def cmd_sample(args):
    cfg = _cfg(args)
    if args.state is not None:
        data = np.load(args.state)
        state = QuantumState.pure(data) if data.ndim == 1 else QuantumState("mixed", cfg["n_qubits"], data)
        state.validate()
    else:
        state = _vqe(cfg)[1].state
    seeds = pipeline.seed_streams(int(cfg["seed"]))
    ds = nqst.make_dataset(state, pipeline.measurement_family(cfg), cfg["nqst"]["shots_per_basis"],
                           np.random.default_rng(seeds["sample"]), {"seed": int(cfg["seed"])})
    args.out.mkdir(parents=True, exist_ok=True)
    nqst.save_dataset(ds, args.out / "dataset.txt")
    print(f"{len(ds)} records, {ds.n_shots} shots in {len(ds.bases)} bases -> {args.out / 'dataset.txt'}")


def cmd_nqst(args):
    cfg = _cfg(args)
    ds = nqst.load_dataset(args.dataset)
    if ds.n_qubits != cfg["n_qubits"]:
        raise ConfigError(f"dataset has {ds.n_qubits} qubits, config expects {cfg['n_qubits']}")
    seeds = pipeline.seed_streams(int(cfg["seed"]))
    init = nqs.init_params(pipeline.transformer_config(cfg, int(seeds["init"].generate_state(1)[0])))
    fit = nqst.train_nqst(init, ds, pipeline.nqst_config(cfg), np.random.default_rng(seeds["nqst"]))
    args.out.mkdir(parents=True, exist_ok=True)
    nqs.save_checkpoint(fit.params, args.out / "nqst.ckpt")
    _write_json(args.out / "nqst.json", {"best_epoch": fit.best_epoch, "best_val_loss": fit.best_val_loss,
                                          "trace": fit.trace})
    print(f"best validation loss {fit.best_val_loss:.6f} at epoch {fit.best_epoch}")


def cmd_vmc(args):
    cfg = _cfg(args)
    H = pipeline.build_hamiltonian(cfg)
    seeds = pipeline.seed_streams(int(cfg["seed"]))
    if args.checkpoint is not None:
        params = nqs.load_checkpoint(args.checkpoint)
        if params.config.n_qubits != cfg["n_qubits"]:
            raise ConfigError("checkpoint qubit count does not match the problem")
    else:
        params = nqs.init_params(pipeline.transformer_config(cfg, int(seeds["init"].generate_state(1)[0])))
    out = vmc.train_vmc(params, H, pipeline.vmc_config(cfg), np.random.default_rng(seeds["vmc"]))
    ref = pipeline.exact_reference(cfg, H)
    metrics = pipeline.nqs_metrics(out.params, H, ref, cfg, np.random.default_rng(seeds["vmc"]))
    args.out.mkdir(parents=True, exist_ok=True)
    nqs.save_checkpoint(out.params, args.out / "vmc.ckpt")
    vmc.write_vmc_trace(out.trace, args.out / "vmc_trace.csv")
    _write_json(args.out / "vmc.json", {"metrics": metrics})
    print(json.dumps(metrics, sort_keys=True))


def _finish(report, out):
    pipeline.emit_report(report, out)
    for stage in pipeline.STAGES:
        if stage in report.stages:
            m = report.stages[stage]
            print(f"{stage:5s} E={m['energy']:.6f} dE={m['energy_error']:.3e} 1-F={m['infidelity']:.3e}")
    if not report.ok:
        print(f"stage {report.failure['stage']} failed: {report.failure['message']}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_pipeline(args):
    return _finish(pipeline.run_pipeline(_cfg(args)), args.out)


def cmd_standalone(args):
    return _finish(pipeline.run_standalone_vmc(_cfg(args)), args.out)


def cmd_sweep(args):
    cfg = _cfg(args)
    done = pipeline.run_sweep(cfg, _seeds(args.seeds), args.out, standalone=args.standalone,
                              workers=args.workers)
    failed = [d for d, ok in done if not ok]
    print(f"{len(done)} runs, {len(failed)} failed; aggregate in {args.out / 'aggregate.csv'}")
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_report(args):
    try:
        reports = [pipeline.load_report(p) for p in args.runs]
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report: {exc}") from exc
    rows = pipeline.aggregate(reports)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        pipeline.write_aggregate(rows, args.out / "aggregate.csv")
    for r in rows:
        print(f"{r['tag']:10s} {r['stage']:4s} {r['metric']:15s} n={r['n']:2d} "
              f"median={r['median']:.4g} [{r['low']:.4g}, {r['high']:.4g}]")


COMMANDS = {"exact": cmd_exact, "vqe": cmd_vqe, "sample": cmd_sample, "nqst": cmd_nqst, "vmc": cmd_vmc,
            "pipeline": cmd_pipeline, "standalone-vmc": cmd_standalone, "sweep": cmd_sweep,
            "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = COMMANDS[args.command](args)
    except (ConfigError, nqst.DatasetFormatError, CapabilityError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK if rc is None else rc


if __name__ == "__main__":
    sys.exit(main())
