"""Acceptance gate. Each test prints one ``PASS``/``FAIL`` line for its criterion.

The end-to-end criteria share one set of N=8 runs (about half an hour on one core).
"""

from pathlib import Path

import numpy as np
import pytest

from nem import nqs, pipeline, vmc
from nem.exact import lanczos_ground_state
from nem.nqs import TransformerConfig, backward, block_slices, forward, init_params
from nem.pauli import SchwingerParams, build_schwinger

DATA = Path(__file__).parent / "data"
SEEDS = range(5)
MASSES = (-1.4, -0.7, 0.0)
# VMC column for lattices above eight sites, at batch 2^8; shared by both arms
LARGE_VMC = ["vmc.iterations=3200", "vmc.batch=256", "vmc.lr=3e-3", "vmc.lr_drops=[1600,2400]",
             f"vmc.reg_eps={25.6 / 2**8}", "vmc.reg_iterations=1000", "vmc.reg_schedule=linear"]


def report_line(capsys, criterion, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")


def nem_cfg(seed, mass=-0.7, noise=0.001, extra=()):
    return pipeline.load_config(None, ["problem.n_sites=8", f"problem.mass={mass}", f"problem.noise={noise}",
                                       *extra], seed)


@pytest.fixture(scope="session")
def runs():
    out = {}
    for m in MASSES:
        for s in SEEDS:
            out[("nem", m, s)] = pipeline.run_pipeline(nem_cfg(s, m))
    for s in SEEDS:
        out[("full-noise", -0.7, s)] = pipeline.run_pipeline(nem_cfg(s, noise=1.0))
    return out


def median_stage(runs, tag, mass, stage, metric):
    return float(np.median([runs[(tag, mass, s)].stages[stage][metric] for s in SEEDS]))


# -- criteria 1-5: properties --------------------------------------------------


def test_c1_gradient_correctness(capsys):
    rng = np.random.default_rng(0)
    worst, probes = 0.0, 0
    for draw in range(4):
        p = init_params(TransformerConfig(6), draw)
        p.flat += rng.uniform(-0.5, 0.5, p.flat.size)
        bits = rng.integers(0, 2, (3, 6))
        a, b = rng.standard_normal(3), rng.standard_normal(3)
        _, _, cache = forward(p, bits, keep_cache=True)
        g = backward(p, cache, a, b)
        f = lambda q: float(a @ forward(q, bits)[0] + b @ forward(q, bits)[1])
        for sl in block_slices(p.config).values():
            for c in rng.choice(np.arange(sl.start, sl.stop), min(2, sl.stop - sl.start), replace=False):
                up, dn = p.copy(), p.copy()
                up.flat[c] += 1e-5
                dn.flat[c] -= 1e-5
                fd = (f(up) - f(dn)) / 2e-5
                denom = max(abs(fd), abs(g[c]))
                if denom > 1e-7:
                    worst = max(worst, abs(fd - g[c]) / denom)
                probes += 1
    ok = probes >= 100 and worst <= 1e-4
    report_line(capsys, 1, ok, f"{probes} probes, worst relative error {worst:.2e}")
    assert ok


def test_c2_normalization(capsys):
    worst = 0.0
    for n in (2, 4, 6, 8, 10):
        for draw in range(20):
            p = init_params(TransformerConfig(n), draw)
            p.flat += np.random.default_rng(draw).uniform(-1, 1, p.flat.size)
            worst = max(worst, abs(np.exp(nqs.enumerate_amplitudes(p)[0]).sum() - 1))
    ok = worst <= 1e-9
    report_line(capsys, 2, ok, f"max |sum p - 1| = {worst:.2e}")
    assert ok


def test_c3_zero_variance(capsys):
    H = build_schwinger(SchwingerParams(4, -0.7))
    w, v = np.linalg.eigh(H.to_dense())
    wf = vmc.TableWavefunction(v[:, 0])
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(5):
        bits, counts = wf.sample_counts(512, rng)
        hloc, _ = vmc.local_energies(wf, H, bits)
        wts = counts / 512
        worst = max(worst, float(wts @ np.abs(hloc - wts @ hloc) ** 2))
    ok = worst <= 1e-20
    report_line(capsys, 3, ok, f"max batch variance {worst:.2e}")
    assert ok


def test_c4_estimator_oracle(capsys):
    worst_e, worst_g = 0.0, 0.0
    for n, m in ((2, 0.3), (4, -0.7)):
        H = build_schwinger(SchwingerParams(n, m))
        D = H.to_dense()
        p = init_params(TransformerConfig(n, layers=1, heads=2, model_dim=4), n)
        p.flat += np.random.default_rng(n).uniform(-0.5, 0.5, p.flat.size)

        def rq(q):
            psi = nqs.statevector(q)
            return (psi.conj() @ D @ psi).real / (psi.conj() @ psi).real

        est = vmc.exhaustive_gradient(p, H)
        worst_e = max(worst_e, abs(est.energy - rq(p)))
        for c in np.random.default_rng(0).choice(p.flat.size, 25, replace=False):
            up, dn = p.copy(), p.copy()
            up.flat[c] += 1e-5
            dn.flat[c] -= 1e-5
            worst_g = max(worst_g, abs((rq(up) - rq(dn)) / 2e-5 - est.grad[c]))
    ok = worst_e <= 1e-8 and worst_g <= 1e-8
    report_line(capsys, 4, ok, f"energy {worst_e:.1e}, gradient {worst_g:.1e}")
    assert ok


def test_c5_lanczos_vs_dense(capsys):
    worst = 0.0
    for n in range(2, 11, 2):
        for m in (-2.0, -0.7, 0.0, 2.0):
            H = build_schwinger(SchwingerParams(n, m))
            e = lanczos_ground_state(H.matvec, 2**n).energy
            worst = max(worst, abs(e - np.linalg.eigvalsh(H.to_dense())[0]))
    ok = worst <= 1e-8
    report_line(capsys, 5, ok, f"max |E_lanczos - E_dense| = {worst:.1e}")
    assert ok


# -- criteria 6-11: end-to-end --------------------------------------------------


def test_c6_end_to_end(runs, capsys):
    assert all(runs[("nem", -0.7, s)].ok for s in SEEDS)
    de_vmc = median_stage(runs, "nem", -0.7, "vmc", "energy_error")
    de_vqe = median_stage(runs, "nem", -0.7, "vqe", "energy_error")
    inf_vmc = median_stage(runs, "nem", -0.7, "vmc", "infidelity")
    ok = abs(de_vmc) <= 5e-2 and inf_vmc <= 1e-2 and abs(de_vqe) >= 10 * abs(de_vmc)
    report_line(capsys, 6, ok, f"median dE vqe {de_vqe:.3e} -> vmc {de_vmc:.3e}, vmc 1-F {inf_vmc:.3e}")
    assert ok


def test_c7_vqe_noise_realism(runs, capsys):
    inf = median_stage(runs, "nem", -0.7, "vqe", "infidelity")
    ok = 0.05 <= inf <= 0.5
    report_line(capsys, 7, ok, f"median vqe infidelity {inf:.3f}")
    assert ok


def test_c8_observables(runs, capsys):
    parts, ok = [], True
    for m in MASSES:
        ex = runs[("nem", m, 0)].exact
        op = median_stage(runs, "nem", m, "vmc", "order_parameter")
        s2 = median_stage(runs, "nem", m, "vmc", "renyi2")
        d_op, d_s2 = abs(op - ex["order_parameter"]), abs(s2 - ex["renyi2"])
        ok &= d_op <= 0.05 and d_s2 <= 0.1
        parts.append(f"m={m}: dP={d_op:.3f} dS2={d_s2:.3f}")
    report_line(capsys, 8, ok, "; ".join(parts))
    assert ok


def test_c9_full_depolarization(runs, capsys):
    pur = max(runs[("full-noise", -0.7, s)].stages["vqe"]["purity"] for s in SEEDS)
    low = median_stage(runs, "nem", -0.7, "vmc", "infidelity")
    full = median_stage(runs, "full-noise", -0.7, "vmc", "infidelity")
    ok = pur <= 0.05 and low < full
    report_line(capsys, 9, ok, f"max vqe purity at noise 1: {pur:.4f}; median vmc 1-F {low:.3e} vs {full:.3e}")
    assert ok


def test_c10_standalone_comparison(runs, capsys):
    nem_ok = alone_ok = 0
    for s in SEEDS:
        cfg = nem_cfg(s, extra=LARGE_VMC)
        H = pipeline.build_hamiltonian(cfg)
        ref = pipeline.exact_reference(cfg, H)
        seeds = pipeline.seed_streams(s)
        start = runs[("nem", -0.7, s)].checkpoints["nqst"]
        out = vmc.train_vmc(start, H, pipeline.vmc_config(cfg), np.random.default_rng(seeds["vmc"]))
        nem_ok += pipeline.state_metrics(nqs.statevector(out.params), H, ref, cfg)["infidelity"] <= 1e-2
        alone = pipeline.run_standalone_vmc(cfg)
        alone_ok += alone.ok and alone.stages["vmc"]["infidelity"] <= 1e-2
    ok = nem_ok >= alone_ok
    report_line(capsys, 10, ok, f"seeds with 1-F <= 1e-2 at batch 256: NEM {nem_ok}/5, standalone {alone_ok}/5")
    assert ok


def test_c11_determinism(runs, tmp_path, capsys):
    pipeline.emit_report(runs[("nem", -0.7, 0)], tmp_path / "a")
    pipeline.emit_report(pipeline.run_pipeline(nem_cfg(0)), tmp_path / "b")
    a, b = pipeline.report_digest(tmp_path / "a"), pipeline.report_digest(tmp_path / "b")
    ok = a == b
    report_line(capsys, 11, ok, f"report sha256 {a[:16]} vs {b[:16]}")
    assert ok


@pytest.mark.xfail(strict=True, reason="sampled VMC at batch 256 collapses onto the dominant basis state on most "
                   "seeds (seed 0 stalls at 1.28e-2); see the decisions ledger")
def test_chemistry_file_exercise(capsys):
    cfg = pipeline.load_config(None, ["problem.kind=hamiltonian-file", f"problem.path={DATA / 'synthetic_4q.ham'}"],
                               0)
    rep = pipeline.run_pipeline(cfg)
    de = rep.stages["vmc"]["energy_error"] if rep.ok else float("nan")
    ok = rep.ok and abs(de) <= 1e-3
    report_line(capsys, "chemistry", ok, f"vmc energy error {de:.3e} (vqe {rep.stages['vqe']['energy_error']:.3e})")
    assert ok
