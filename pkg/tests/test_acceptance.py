"""Acceptance criteria at desk scale.

Each test records one ``criterion N: PASS|FAIL ...`` line, shown in the
terminal summary, and then asserts the hard part of its criterion.
"""

import os
import time
from dataclasses import replace

import numpy as np
import pytest

from rfquant import bitpack
from rfquant.errors import RFError
from rfquant.experiments import (
    ExperimentConfig,
    preset,
    run,
    run_depth_sweep,
    run_mnist_sweep,
)
from rfquant.gep import Sigma0Spec, gep_recursion, mc_covariance, op_norm_diff
from rfquant.interpolate import (
    NEG_ENTROPY,
    SQUARED_L2,
    bregman_fit,
    kkt_residual,
    min_norm_fit,
    smd_train,
)
from rfquant.rf_model import build_network
from rfquant.theory import (
    printed_residual,
    solve_mirror_saddle,
    solve_sgd_system,
    theory_input,
)

MNIST_DIR = os.environ.get("RF_MNIST_DIR", os.path.join(os.path.dirname(__file__), "..", "data", "mnist"))


def record(report, k, ok, detail, elapsed):
    report.append(f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail} [{elapsed:.0f}s]")


def _gap_line(table, metric):
    gaps = {r.L if r.metric != "gap_accuracy" else (r.L, r.d_hidden): r.value for r in table.summary if r.metric == metric}
    return gaps


def _depth_criterion(report, k, mirror):
    t0 = time.time()
    table = run_depth_sweep(replace(preset("depth-sweep", "desk"), mirror=mirror))
    gaps = _gap_line(table, "rel_gap_mse")
    ok = len(gaps) == 5 and all(g <= 0.05 for g in gaps.values())
    detail = "rel gaps " + " ".join(f"L{L}={g:.2%}" for L, g in sorted(gaps.items())) + " (bound 5%)"
    record(report, k, ok, detail, time.time() - t0)
    assert ok, detail


def test_criterion_1_depth_sweep_min_norm(report):
    _depth_criterion(report, 1, "l2")


def test_criterion_2_depth_sweep_entropy(report):
    _depth_criterion(report, 2, "neg_entropy")


def test_criterion_3_mnist(report):
    if not os.path.isfile(os.path.join(MNIST_DIR, "train-images-idx3-ubyte")):
        record(report, 3, False, f"MNIST files missing under {MNIST_DIR}; run scripts/fetch_mnist_subset.py", 0)
        pytest.fail("MNIST data missing")
    t0 = time.time()
    cfg = replace(preset("mnist-sweep", "desk"), mnist_dir=MNIST_DIR)
    table = run_mnist_sweep(cfg)
    gaps = _gap_line(table, "gap_accuracy")
    ok = len(gaps) == 9 and all(g <= 0.02 for g in gaps.values())
    detail = "accuracy gaps " + " ".join(f"L{L}/w{w}={100 * g:.2f}pp" for (L, w), g in sorted(gaps.items())) + " (bound 2pp)"
    record(report, 3, ok, detail, time.time() - t0)
    assert ok, detail


def test_criterion_4_gep_accuracy(report):
    t0 = time.time()
    ratios = {}
    for L in (1, 2):
        err = {}
        for d in (256, 512):
            e = []
            for s in range(5):
                net = build_network([d] * (L + 1), "tanh", "gaussian", seed=100 + s)
                s0 = Sigma0Spec.isotropic(d)
                ref = gep_recursion(s0, net).cov[-1]
                M = mc_covariance(net, s0, 50 * d, seed=900 + s, control_variate=True)
                e.append(op_norm_diff(M, ref) / np.linalg.norm(ref, 2))
            err[d] = float(np.mean(e))
        ratios[L] = err[256] / err[512]
    ok = all(r >= 1.3 for r in ratios.values())
    detail = "error ratio d256/d512 " + " ".join(f"L{L}={r:.2f}" for L, r in ratios.items()) + " (bound 1.3)"
    record(report, 4, ok, detail, time.time() - t0)
    assert ok, detail


SIZES = (8, 64, 65, 127, 128, 1000)


def test_criterion_5_kernel(report):
    t0 = time.time()
    rng = np.random.default_rng(5)
    worst = 0.0
    bytes_ok = True
    for d_out in SIZES:
        for d_in in SIZES:
            W = rng.standard_normal((d_out, d_in))
            X = rng.standard_normal((7, d_in))
            P = bitpack.pack_signs(W)
            dense = np.where(W >= 0, 1.0, -1.0) / np.sqrt(d_in)
            worst = max(worst, float(np.max(np.abs(bitpack.packed_matmul(P, X) - X @ dense.T))) / (1e-10 * d_in))
            worst = max(worst, float(np.max(np.abs(bitpack.packed_matvec(P, X[0]) - dense @ X[0]))) / (1e-10 * d_in))
            bytes_ok &= P.nbytes == d_out * -(-d_in // 64) * 8 == bitpack.packed_bytes(d_out, d_in)
    rep = bitpack.bench_kernel(4096, 4096, reps=30)
    ok = worst <= 1.0 and bytes_ok
    soft = "" if rep.speedup >= 2 else " WARNING speedup below the 2x soft floor"
    detail = (
        f"max error {worst:.2e} x 1e-10*d_in, byte formula {'exact' if bytes_ok else 'WRONG'}, "
        f"4096x4096 speedup {rep.speedup:.2f}x, memory {rep.memory_ratio:.0f}x smaller{soft}"
    )
    record(report, 5, ok, detail, time.time() - t0)
    assert ok, detail


def test_criterion_6_interpolators(report):
    t0 = time.time()
    rng = np.random.default_rng(6)
    worst = dict(resid=0.0, rowspace=0.0, kkt=0.0, quad=0.0, smd=0.0)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        D = n + int(rng.integers(1, 60))
        Phi = rng.standard_normal((n, D)) / np.sqrt(D)
        y = rng.standard_normal(n)
        a = min_norm_fit(Phi, y).a
        _, _, Vt = np.linalg.svd(Phi, full_matrices=False)
        worst["resid"] = max(worst["resid"], float(np.max(np.abs(Phi @ a - y))))
        worst["rowspace"] = max(worst["rowspace"], float(np.linalg.norm(a - Vt.T @ (Vt @ a))))
        a0 = rng.standard_normal(D)
        b = bregman_fit(Phi, y, SQUARED_L2, a0)
        worst["quad"] = max(worst["quad"], float(np.max(np.abs(b.a - min_norm_fit(Phi, y, a0).a))))
        worst["kkt"] = max(worst["kkt"], kkt_residual(Phi, y, SQUARED_L2, a0, b))
        Pp = rng.uniform(0, 1, (n, D))
        yp = Pp @ rng.uniform(0.2, 1.5, D)
        e0 = rng.uniform(0.2, 1.5, D)
        worst["kkt"] = max(worst["kkt"], kkt_residual(Pp, yp, NEG_ENTROPY, e0, bregman_fit(Pp, yp, NEG_ENTROPY, e0)))
    for _ in range(10):
        Phi = rng.standard_normal((3, 8)) / np.sqrt(8)
        y = rng.standard_normal(3)
        r = smd_train(Phi, y, step=0.5, tol=1e-11)
        worst["smd"] = max(worst["smd"], float(np.linalg.norm(r.a - min_norm_fit(Phi, y).a)))
    bounds = dict(resid=1e-8, rowspace=1e-8, kkt=1e-8, quad=1e-8, smd=1e-4)
    ok = all(worst[k] <= bounds[k] for k in bounds)
    detail = " ".join(f"{k}={worst[k]:.1e}(<={bounds[k]:.0e})" for k in bounds)
    record(report, 6, ok, detail, time.time() - t0)
    assert ok, detail


GRID7 = [
    ((600, 400, 300), 200, "tanh"),
    ((800, 600, 400), 300, "tanh"),
    ((1000, 800, 600, 400), 250, "tanh"),
    ((500, 300), 200, "tanh"),
    ((1024, 768, 512), 300, "identity"),
]


def test_criterion_7_theory_self_consistency(report):
    t0 = time.time()
    parts = []
    ok = True
    for dims, n, act in GRID7:
        inp = theory_input(dims, n, act)
        sgd = solve_sgd_system(inp, method="spectral")
        sad = solve_mirror_saddle(inp)
        rel = abs(sad.tau_sq / sgd.tau_sq - 1)
        ok &= sgd.converged and sgd.residual <= 1e-10 and sad.converged and rel <= 1e-3
        try:
            pr = solve_sgd_system(inp)
            printed = f"printed res={printed_residual(inp, pr) if inp.L > 1 else pr.residual:.1e}"
            ok &= pr.residual <= 1e-10 if pr.converged else True
        except RFError as exc:
            printed = f"printed {exc.name}"
        parts.append(f"{act}:{'x'.join(map(str, dims))} res={sgd.residual:.1e} saddle_rel={rel:.1e} {printed}")
    detail = "; ".join(parts)
    record(report, 7, ok, detail, time.time() - t0)
    assert ok, detail


def test_criterion_8_theory_vs_monte_carlo(report):
    t0 = time.time()
    cfg = ExperimentConfig(
        experiment="theory-compare", grid="identity:2048x1536x1024:400;tanh:2048x2048x1024:400",
        theory_methods=("spectral", "printed"), trials=10, n_test=2000, weight_kinds=("gaussian",),
    )
    table = run(cfg)
    gaps = {r.mirror.split("|")[1]: r.value for r in table.summary if r.metric == "rel_gap_spectral"}
    logged = []
    for closure in ("theta-as-zetaL", "zero"):
        t = run(replace(cfg, closure=closure, grid="tanh:2048x2048x1024:400", trials=1, theory_methods=("printed",)))
        logged += [f"{closure}:{r.metric}={r.value:.3e}" for r in t.rows if r.weight_kind == "theory"]
    ok = gaps["identity"] <= 0.10 and gaps["tanh"] <= 0.20
    detail = f"identity gap {gaps['identity']:.1%} (<=10%), tanh L=2 gap {gaps['tanh']:.1%} (<=20%); printed system: " + ", ".join(logged)
    # soft: this gates a report, not the build
    record(report, 8, ok, detail, time.time() - t0)
