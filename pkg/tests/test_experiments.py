import numpy as np
import pytest

from rfquant.dataio import RESULT_COLUMNS, read_csv
from rfquant.errors import ConfigError, InsufficientData
from rfquant.experiments import (
    ExperimentConfig,
    ResultTable,
    Row,
    aggregate,
    closed_form_mse,
    empirical_mse,
    parse_dims,
    parse_grid,
    preset,
    run,
    run_mnist_sweep,
    trial_seed,
    with_overrides,
)
from rfquant.gep import Sigma0Spec, gep_recursion, sigma_chain
from rfquant.interpolate import min_norm_fit
from rfquant.rf_model import build_network, forward, sample_ground_truth

SMALL = dict(d=96, d_hidden=64, depths=(1, 2), n=30, n_test=200, trials=3, threads=1)


def small(**kw):
    return ExperimentConfig(**{**SMALL, **kw})


def test_trial_seed():
    s = trial_seed(0, 1, 2)
    assert s == int(np.random.SeedSequence([0, 1, 2]).generate_state(1, np.uint64)[0])
    assert len({trial_seed(0, t, w) for t in range(5) for w in range(5)}) == 25


def test_config_parsing_and_overrides():
    cfg = ExperimentConfig.from_mapping({"depths": "1,3", "closed-form": "false", "tol": "1e-6"})
    assert cfg.depths == (1, 3) and cfg.closed_form is False and cfg.tol == 1e-6
    assert ExperimentConfig.from_mapping(cfg.as_strings()) == cfg
    assert with_overrides(cfg, {"n": "5"}).n == 5
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"colour": "red"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"n": "many"})
    with pytest.raises(ConfigError):
        ExperimentConfig(trials=0)
    with pytest.raises(ConfigError):
        preset("depth-sweep", "huge")
    assert preset("mnist-sweep", "desk").activation == "relu"


def test_dims_and_grid():
    assert parse_dims("8x4x2") == (8, 4, 2)
    assert parse_grid("tanh:8x4:3; identity:6x5x4:2") == [("tanh", (8, 4), 3), ("identity", (6, 5, 4), 2)]
    for bad in ("", "tanh:8x4", "tanh:8xq:3"):
        with pytest.raises(ConfigError):
            parse_grid(bad)


def test_aggregate_recomputes():
    rows = [Row("e", "gaussian", 1, 4, 3, 2, 5, s, "l2", "mse", v) for s, v in enumerate([1.0, 2.0, 4.0])]
    agg = {r.metric: r for r in aggregate(rows)}
    assert agg["mse.mean"].value == pytest.approx(7 / 3)
    assert agg["mse.std"].value == pytest.approx(np.std([1, 2, 4], ddof=1))
    assert agg["mse.mean"].seed == -1
    one = aggregate(rows[:1])
    assert [r.value for r in one] == [1.0, 0.0]


def test_closed_form_matches_explicit_covariance(rng):
    net = build_network([40, 30, 20], "tanh", seed=1)
    a, a_star = rng.standard_normal(20), rng.standard_normal(20)
    full = gep_recursion(Sigma0Spec.isotropic(40), net)
    D = a - a_star
    ref = float(D @ full.cov[2] @ D)
    assert closed_form_mse(a, a_star, net, full) == pytest.approx(ref, rel=1e-12)
    lazy = gep_recursion(Sigma0Spec.isotropic(40), net, materialize=False)
    assert closed_form_mse(a, a_star, net, lazy) == pytest.approx(ref, rel=1e-12)


def test_closed_form_tracks_empirical():
    d, p, n = 400, 300, 100
    net = build_network([d, p, p], "tanh", seed=2)
    gt = sample_ground_truth(p, 3)
    X = np.random.default_rng(4).standard_normal((n, d)) / np.sqrt(d)
    F = forward(net, X)
    a = min_norm_fit(F, F @ gt.a_star).a
    emp = empirical_mse(net, a, gt.a_star, 50_000, seed=5)
    cf = closed_form_mse(a, gt.a_star, net, sigma_chain("tanh", 1 / d, 2))
    assert cf == pytest.approx(emp, rel=0.05)


def test_depth_sweep_shape_and_determinism(tmp_path):
    t1 = run(small())
    t2 = run(small(threads=3))
    assert t1.rows == t2.rows and t1.summary == t2.summary
    mse = t1.select(metric="mse")
    assert len(mse) == 2 * 2 * 3
    assert all(r.value > 0 for r in mse)
    assert {r.metric for r in t1.members()} == {"mse", "mse_closed_form", "sigma_min", "ill_conditioned"}
    for L in (1, 2):
        g = t1.value(metric="mse.mean", L=L, weight_kind="gaussian")
        q = t1.value(metric="mse.mean", L=L, weight_kind="rademacher")
        assert t1.value(metric="rel_gap_mse", L=L) == pytest.approx(abs(g - q) / g)
    main, _summ = t1.write(tmp_path, "depth-sweep")
    back = read_csv(main)
    assert tuple(back) == RESULT_COLUMNS and len(back["value"]) == len(t1.rows)
    assert back["value"] == [r.value for r in t1.rows]


def test_entropy_depth_sweep_runs():
    t = run(small(mirror="neg_entropy", d_hidden=300, depths=(1,), trials=2))
    assert all(np.isfinite(r.value) for r in t.rows)


def _separable_mnist(rng, per_class=30):
    # two classes whose images light disjoint pixel blocks
    def make(k):
        imgs = np.zeros((2 * k, 64), dtype=np.uint8)
        labels = np.repeat([0, 1], k).astype(np.uint8)
        imgs[:k, :32] = rng.integers(150, 256, (k, 32))
        imgs[k:, 32:] = rng.integers(150, 256, (k, 32))
        return imgs, labels

    tri, trl = make(per_class)
    tei, tel = make(per_class)
    return dict(train_images=tri, train_labels=trl, test_images=tei, test_labels=tel)


def test_mnist_sweep_separable(rng):
    cfg = ExperimentConfig(
        experiment="mnist-sweep", activation="relu", depths=(1, 2), d_hidden=128, widths=(64,),
        k_per_class=10, test_per_class=10, trials=2, threads=1,
    )
    t = run_mnist_sweep(cfg, data=_separable_mnist(rng))
    acc = t.select(metric="accuracy")
    assert len(acc) == 3 * 2 * 2 and all(r.value == 1.0 for r in acc)
    assert all(r.value == 0.0 for r in t.summary if r.metric == "gap_accuracy")


def test_mnist_missing_data(tmp_path):
    with pytest.raises(InsufficientData):
        run(ExperimentConfig(experiment="mnist-sweep"))
    with pytest.raises(InsufficientData):
        run(ExperimentConfig(experiment="mnist-sweep", mnist_dir=str(tmp_path)))


def test_theory_rows():
    t = run(ExperimentConfig(experiment="theory", dims="300x200", n=100, theory_methods=("spectral", "mirror-saddle", "printed")))
    vals = {r.metric: r.value for r in t.rows}
    assert vals["tau_sq_spectral"] == pytest.approx(vals["tau_sq_mirror-saddle"], rel=1e-6)
    assert "tau_sq_printed" in vals


def test_theory_compare_error_rows():
    cfg = ExperimentConfig(
        experiment="theory-compare", grid="tanh:200x150:80;tanh:100x150x200:80", theory_methods=("spectral", "printed"),
        trials=2, n_test=500, weight_kinds=("gaussian",), threads=1,
    )
    t = run(cfg)
    errs = [r.metric for r in t.rows if r.metric.startswith("error_")]
    assert "error_printed:DegenerateRatio" in errs
    gap = [r for r in t.summary if r.metric == "rel_gap_spectral" and r.d == 200]
    assert len(gap) == 1 and gap[0].mirror == "l2|tanh"


def test_bench_rows():
    t = run(ExperimentConfig(experiment="bench", bench_dims=(130,), bench_reps=3))
    assert t.value(metric="packed_bytes") == 130 * 3 * 8
    assert t.value(metric="dense_bytes") == 130 * 130 * 8


def test_result_table_value_lookup():
    t = ResultTable([Row("e", "g", 1, 2, 3, 4, 5, 6, "l2", "m", 1.0)])
    assert t.value(metric="m") == 1.0
    with pytest.raises(KeyError):
        t.value(metric="absent")


def test_closed_form_orthonormal_example(rng):
    d = 16
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    from rfquant.rf_model import network_from_matrices

    net = network_from_matrices([Q[:8]], "tanh")
    state = sigma_chain("tanh", 1 / d, 1)
    a_star = rng.standard_normal(8)
    e1 = np.eye(8)[0]
    ref = state.rho1[0] ** 2 / d + state.rho2_sq[0]
    assert closed_form_mse(a_star + e1, a_star, net, state) == pytest.approx(ref, rel=1e-12)
    assert closed_form_mse(a_star, a_star, net, state) == 0.0
    assert empirical_mse(net, a_star, a_star, 100, seed=1) == 0.0


def test_closed_form_within_three_standard_errors():
    d, p, n, n_test = 512, 384, 128, 10_000
    net = build_network([d, p], "tanh", seed=7)
    gt = sample_ground_truth(p, 8)
    X = np.random.default_rng(9).standard_normal((n, d)) / np.sqrt(d)
    F = forward(net, X)
    a = min_norm_fit(F, F @ gt.a_star).a
    Xt = np.random.default_rng(10).standard_normal((n_test, d)) / np.sqrt(d)
    r2 = (forward(net, Xt) @ (a - gt.a_star)) ** 2
    cf = closed_form_mse(a, gt.a_star, net, gep_recursion(Sigma0Spec.isotropic(d), net))
    assert abs(cf - r2.mean()) <= 3 * r2.std() / np.sqrt(n_test)


def test_empirical_mse_error_scaling():
    net = build_network([64, 48], "tanh", seed=1)
    rng = np.random.default_rng(2)
    a, a_star = rng.standard_normal(48), rng.standard_normal(48)
    sizes = np.array([250, 500, 1000])
    ses = [np.std([empirical_mse(net, a, a_star, int(m), seed=s) for s in range(200)]) for m in sizes]
    slope = np.polyfit(np.log(sizes), np.log(ses), 1)[0]
    assert abs(slope + 0.5) < 0.1
