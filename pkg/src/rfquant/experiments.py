"""Sweeps comparing Gaussian and sign-quantized random features, plus theory and kernel tables.

Every trial draws one Gaussian network and uses its sign for the quantized
kind, so the two kinds are compared on the same draw.  Per-trial seeds come
from :func:`trial_seed`.  Tables are sorted before they are written, so
output does not depend on worker scheduling.
"""

from __future__ import annotations

import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from typing import NamedTuple

import numpy as np

from . import bitpack
from .dataio import (
    RESULT_COLUMNS,
    balanced_subsample,
    gen_synthetic,
    normalize_mnist,
    one_hot,
    read_idx,
    write_csv,
)
from .errors import ConfigError, DimMismatch, InsufficientData, RFError
from .gep import GepState, sigma_chain
from .interpolate import bregman_fit, get_mirror, min_norm_fit
from .rf_model import (
    ActivationKind,
    RFNetwork,
    WeightKind,
    WeightLayer,
    build_network,
    forward,
    sample_ground_truth,
    sign_matrix,
)
from .theory import (
    sigma_min_diagnostic,
    solve_mirror_saddle,
    solve_sgd_system,
    theory_input,
)

ILL_CONDITIONED = 1e-10
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one experiment; every field is a config-file key.

    Sequence fields are written comma-separated in config files.  ``grid``
    lists theory cases as ``activation:d0xd1x...:n`` separated by ``;``.
    """

    experiment: str = "depth-sweep"
    d: int = 2048
    d_hidden: int = 1024
    depths: tuple[int, ...] = (1, 2, 3, 4, 5)
    widths: tuple[int, ...] = ()
    width_depth: int = 2
    n: int = 400
    n_test: int = 2000
    trials: int = 10
    master_seed: int = 0
    weight_kinds: tuple[str, ...] = ("gaussian", "rademacher")
    activation: str = "tanh"
    mirror: str = "l2"
    tol: float = 1e-10
    max_iter: int = 100
    closed_form: bool = True
    k_per_class: int = 20
    test_per_class: int = 20
    mnist_dir: str = ""
    bench_dims: tuple[int, ...] = (512, 1024, 2048, 4096, 8192)
    bench_reps: int = 100
    grid: str = "tanh:2048x1024:400;tanh:2048x2048x1024:400;identity:1024x768x512:300"
    theory_methods: tuple[str, ...] = ("spectral",)
    dims: str = "2048x1024"
    closure: str = "theta-as-zetaL"
    fprime: str = "zeta2"
    source: str = "astar"
    threads: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1", trials=self.trials)
        for name in ("depths", "weight_kinds", "bench_dims"):
            if not getattr(self, name):
                raise ConfigError("sweep set must be nonempty", key=name)

    @classmethod
    def from_mapping(cls, values: dict) -> ExperimentConfig:
        """Build from string (or typed) values, rejecting unknown keys."""
        kinds = {f.name: f for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in kinds:
                raise ConfigError("unknown config key", key=key)
            out[key] = _coerce(kinds[key].type, raw, key)
        return cls(**out)

    def as_strings(self) -> dict[str, str]:
        return {k: _render(v) for k, v in asdict(self).items()}


def _coerce(typ: str, raw, key: str):
    if not isinstance(raw, str):
        return tuple(raw) if typ.startswith("tuple") else raw
    raw = raw.strip()
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "tuple[int, ...]":
            return tuple(int(s) for s in raw.split(",") if s.strip())
        if typ == "tuple[str, ...]":
            return tuple(s.strip() for s in raw.split(",") if s.strip())
    except ValueError:
        raise ConfigError("cannot parse value", key=key, value=raw) from None
    return raw


def _render(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, bool):
        return "1" if v else "0"
    return str(v)


_PRESETS = {
    ("depth-sweep", "desk"): dict(d=2048, d_hidden=1024, n=400, n_test=2000, trials=10),
    ("depth-sweep", "paper"): dict(d=8192, d_hidden=4096, n=1000, n_test=5000, trials=10),
    ("mnist-sweep", "desk"): dict(
        activation="relu", depths=(1, 2, 3, 4, 5), d_hidden=512, widths=(256, 512, 1024, 2048, 4196),
        width_depth=2, k_per_class=20, test_per_class=20, trials=20,
    ),
    ("theory-compare", "desk"): dict(weight_kinds=("gaussian",), trials=10, n_test=2000),
    ("theory-compare", "paper"): dict(
        weight_kinds=("gaussian",), trials=10, n_test=5000,
        grid="tanh:8192x4096:1000;tanh:8192x4096x4096:1000;identity:4096x3072x2048:1000",
    ),
    ("theory", "desk"): dict(dims="2048x1024", n=400),
    ("theory", "paper"): dict(dims="8192x4096", n=1000),
    ("bench", "desk"): dict(bench_dims=(512, 1024, 2048, 4096), bench_reps=50),
    ("bench", "paper"): dict(bench_dims=(512, 1024, 2048, 4096, 8192), bench_reps=100),
}
_PRESETS[("mnist-sweep", "paper")] = _PRESETS[("mnist-sweep", "desk")]


def preset(experiment: str, name: str) -> ExperimentConfig:
    """Built-in parameters: ``paper`` for full-size runs, ``desk`` for acceptance runs."""
    if (experiment, name) not in _PRESETS:
        raise ConfigError("no such preset", experiment=experiment, preset=name)
    return ExperimentConfig(experiment=experiment, **_PRESETS[(experiment, name)])


def parse_dims(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.lower().split("x"))
    except ValueError:
        raise ConfigError("dims must look like 2048x1024", dims=text) from None


def parse_grid(text: str) -> list[tuple[str, tuple[int, ...], int]]:
    out = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        parts = item.split(":")
        if len(parts) != 3:
            raise ConfigError("grid entries look like tanh:2048x1024:400", entry=item)
        try:
            out.append((parts[0], parse_dims(parts[1]), int(parts[2])))
        except ValueError:
            raise ConfigError("bad sample count", entry=item) from None
    if not out:
        raise ConfigError("grid is empty")
    return out


def trial_seed(master: int, trial: int, sweep: int) -> int:
    """``SeedSequence([master, trial, sweep])`` reduced to one 64-bit word."""
    return int(np.random.SeedSequence([master, trial, sweep]).generate_state(1, np.uint64)[0])


def _sub_seeds(seed: int, k: int) -> list[int]:
    return [int(c.generate_state(1, np.uint64)[0]) for c in np.random.SeedSequence(seed).spawn(k)]


def _workers(cfg: ExperimentConfig) -> int:
    if cfg.threads > 0:
        return cfg.threads
    env = os.environ.get("RF_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("RF_THREADS must be an integer", value=env) from None
    return min(4, os.cpu_count() or 1)


def _pool_map(fn, jobs, cfg):
    workers = _workers(cfg)
    if workers == 1 or len(jobs) == 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------------------
# result tables


class Row(NamedTuple):
    experiment: str
    weight_kind: str
    L: int
    d: int
    d_hidden: int
    n: int
    n_test: int
    seed: int
    mirror: str
    metric: str
    value: float


def _row_key(r: Row):
    return tuple(r)


class ResultTable:
    """Member rows plus aggregate rows (``metric.mean`` and ``metric.std``).

    ``summary`` holds the aggregates and any derived gap rows.
    """

    def __init__(self, rows=(), summary=()):
        self.rows = sorted(rows, key=_row_key)
        self.summary = sorted(summary, key=_row_key)

    @classmethod
    def from_members(cls, rows, extra_summary=()) -> ResultTable:
        aggs = aggregate(rows)
        return cls(list(rows) + aggs, aggs + list(extra_summary))

    def members(self) -> list[Row]:
        return [r for r in self.rows if not r.metric.endswith((".mean", ".std"))]

    def select(self, **match) -> list[Row]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def value(self, **match) -> float:
        seen = set(self.rows)
        pool = self.rows + [r for r in self.summary if r not in seen]
        hits = [r for r in pool if all(getattr(r, k) == v for k, v in match.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {match}")
        return hits[0].value

    @staticmethod
    def columns(rows) -> dict:
        return {c: [getattr(r, c) for r in rows] for c in RESULT_COLUMNS}

    def write(self, out_dir, name: str) -> tuple[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        main = os.path.join(out_dir, f"{name}.csv")
        summ = os.path.join(out_dir, f"{name}_summary.csv")
        write_csv(self.columns(self.rows), main)
        write_csv(self.columns(self.summary), summ)
        return main, summ


def aggregate(rows) -> list[Row]:
    """Mean and sample standard deviation over seeds for each group."""
    groups = defaultdict(list)
    for r in rows:
        groups[r._replace(seed=0, value=0.0)].append(r.value)
    out = []
    for key, vals in groups.items():
        v = np.asarray(vals, dtype=np.float64)
        std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
        out.append(key._replace(seed=-1, metric=key.metric + ".mean", value=float(np.mean(v))))
        out.append(key._replace(seed=-1, metric=key.metric + ".std", value=std))
    return out


# ---------------------------------------------------------------------------
# test error


def closed_form_mse(a, a_star, net: RFNetwork, gep_state: GepState, sigma0_sq: float | None = None) -> float:
    """``rho1^2 D^T W_L Sigma_{L-1} W_L^T D + rho2^2 |D|^2`` with ``D = a - a_*``.

    Uses ``gep_state.cov[L-1]`` when it is materialized.  Otherwise the
    quadratic form is unrolled through the recursion
    ``u^T Sigma_l u = rho1^2 |Sigma_{l-1}^{1/2} W_l^T u|^2 + rho2^2 |u|^2``
    down to an isotropic ``Sigma_0 = sigma0_sq I`` (default
    ``gep_state.sigma_sq[0]``), using only mat-vecs.
    """
    D = np.asarray(a, dtype=np.float64) - np.asarray(a_star, dtype=np.float64)
    if D.shape != (net.d_out,):
        raise DimMismatch("a and a_star must have length d_L", d_L=net.d_out, got=D.shape)
    L = net.L
    if gep_state.L < L:
        raise DimMismatch("GEP state covers fewer layers than the network", state=gep_state.L, L=L)
    cov = gep_state.cov[L - 1] if len(gep_state.cov) >= L else None
    u = net.layers[L - 1].dense().T @ D
    if cov is not None:
        quad = float(u @ cov @ u)
    else:
        s0 = gep_state.sigma_sq[0] if sigma0_sq is None else sigma0_sq
        quad = _unrolled_form(u, net, gep_state, L - 1, s0)
    val = gep_state.rho1[L - 1] ** 2 * quad + gep_state.rho2_sq[L - 1] * float(D @ D)
    return max(val, 0.0)


def _unrolled_form(u, net, state, layer, s0) -> float:
    # u^T Sigma_layer u, accumulated from the top layer down
    total = 0.0
    weight = 1.0
    for l in range(layer, 0, -1):
        total += weight * state.rho2_sq[l - 1] * float(u @ u)
        weight *= state.rho1[l - 1] ** 2
        u = net.layers[l - 1].dense().T @ u
    return total + weight * s0 * float(u @ u)


def empirical_mse(net: RFNetwork, a, a_star, n_test: int, seed: int) -> float:
    """Mean squared prediction gap on ``n_test`` fresh ``N(0, I/d)`` inputs."""
    D = np.asarray(a, dtype=np.float64) - np.asarray(a_star, dtype=np.float64)
    X = gen_synthetic(net.dims[0], n_test, seed)
    r = forward(net, X) @ D
    return float(np.mean(r * r))


def _fit(F, y, mirror: str, tol: float, max_iter: int):
    mm = get_mirror(mirror)
    if mm.name == "squared_l2":
        return min_norm_fit(F, y)
    return bregman_fit(F, y, mm, tol=tol, max_iter=max_iter)


def _paired_networks(dims, activation, kinds, seed, *, allow_non_odd=False) -> dict[str, RFNetwork]:
    base = build_network(dims, activation, "gaussian", seed, allow_non_odd=allow_non_odd)
    out = {}
    for kind in kinds:
        k = WeightKind.parse(kind)
        if k is WeightKind.GAUSSIAN:
            out[k.value] = base
        else:
            layers = tuple(WeightLayer(sign_matrix(layer.dense())) for layer in base.layers)
            out[k.value] = RFNetwork(layers, base.activation, base.dims)
    return out


# ---------------------------------------------------------------------------
# depth sweep


def _depth_trial(job):
    cfg, sweep, L, trial = job
    seed = trial_seed(cfg.master_seed, trial, sweep)
    net_s, data_s, star_s, test_s = _sub_seeds(seed, 4)
    dims = (cfg.d,) + (cfg.d_hidden,) * L
    nets = _paired_networks(dims, cfg.activation, cfg.weight_kinds, net_s)
    X = gen_synthetic(cfg.d, cfg.n, data_s)
    a_star = sample_ground_truth(cfg.d_hidden, star_s).a_star
    mirror = get_mirror(cfg.mirror).name
    act = ActivationKind.parse(cfg.activation)
    state = sigma_chain(act, 1.0 / cfg.d, L) if cfg.closed_form and act.odd else None
    rows = []
    common = dict(experiment="depth-sweep", L=L, d=cfg.d, d_hidden=cfg.d_hidden, n=cfg.n, n_test=cfg.n_test, seed=seed, mirror=cfg.mirror)
    for kind, net in nets.items():
        F = forward(net, X)
        y = F @ a_star
        smin = sigma_min_diagnostic(F)
        res = _fit(F, y, mirror, cfg.tol, cfg.max_iter)
        row = lambda metric, value, kind=kind: Row(weight_kind=kind, metric=metric, value=float(value), **common)
        rows.append(row("mse", empirical_mse(net, res.a, a_star, cfg.n_test, test_s)))
        if state is not None:
            rows.append(row("mse_closed_form", closed_form_mse(res.a, a_star, net, state)))
        rows.append(row("sigma_min", smin))
        rows.append(row("ill_conditioned", float(smin < ILL_CONDITIONED)))
    return rows


def _paired_gaps(rows, metric: str, relative: bool) -> list[Row]:
    means = {}
    for r in aggregate([r for r in rows if r.metric == metric]):
        if r.metric == metric + ".mean":
            means[(r.L, r.d, r.d_hidden, r.n, r.n_test, r.mirror, r.weight_kind)] = r
    out = []
    for key, g in means.items():
        if key[-1] != "gaussian":
            continue
        q = means.get(key[:-1] + ("rademacher",))
        if q is None:
            continue
        gap = abs(g.value - q.value)
        if relative:
            gap = gap / g.value if g.value > 0 else float(gap > 0)
        out.append(g._replace(weight_kind="paired", metric=("rel_gap_" if relative else "gap_") + metric, value=float(gap)))
    return out


def run_depth_sweep(cfg: ExperimentConfig) -> ResultTable:
    """Test MSE of the interpolating last layer across depths and weight kinds."""
    jobs = [(cfg, s, L, t) for s, L in enumerate(cfg.depths) for t in range(cfg.trials)]
    rows = [r for part in _pool_map(_depth_trial, jobs, cfg) for r in part]
    return ResultTable.from_members(rows, _paired_gaps(rows, "mse", relative=True))


# ---------------------------------------------------------------------------
# MNIST


def load_mnist(directory: str) -> dict[str, np.ndarray]:
    """The four standard IDX files (optionally ``.gz``) from ``directory``."""
    if not directory:
        raise InsufficientData("no MNIST directory given; set mnist_dir")
    out = {}
    for key, stem in MNIST_FILES.items():
        for name in (stem, stem + ".gz"):
            path = os.path.join(directory, name)
            if os.path.isfile(path):
                out[key] = read_idx(path)[1]
                break
        else:
            raise InsufficientData("missing MNIST file", path=os.path.join(directory, stem))
    if len(out["train_images"]) != len(out["train_labels"]) or len(out["test_images"]) != len(out["test_labels"]):
        raise InsufficientData("image and label counts differ")
    return out


def _mnist_trial(job):
    cfg, data, sweep, L, width, trial = job
    seed = trial_seed(cfg.master_seed, trial, sweep)
    net_s, tr_s, te_s = _sub_seeds(seed, 3)
    tr = balanced_subsample(data["train_labels"], cfg.k_per_class, tr_s)
    te = balanced_subsample(data["test_labels"], cfg.test_per_class, te_s)
    Xtr, Xte = data["X_train"][tr], data["X_test"][te]
    num_classes = int(max(data["train_labels"].max(), data["test_labels"].max())) + 1
    Y = one_hot(data["train_labels"][tr], num_classes)
    yte = data["test_labels"][te]
    dims = (Xtr.shape[1],) + (width,) * L
    nets = _paired_networks(dims, cfg.activation, cfg.weight_kinds, net_s, allow_non_odd=True)
    rows = []
    for kind, net in nets.items():
        F = forward(net, Xtr)
        smin = sigma_min_diagnostic(F)
        a = min_norm_fit(F, Y).a
        acc = float(np.mean(np.argmax(forward(net, Xte) @ a, axis=1) == yte))
        common = dict(experiment="mnist-sweep", weight_kind=kind, L=L, d=dims[0], d_hidden=width, n=len(tr), n_test=len(te), seed=seed, mirror="l2")
        rows.append(Row(metric="accuracy", value=acc, **common))
        rows.append(Row(metric="sigma_min", value=smin, **common))
        rows.append(Row(metric="ill_conditioned", value=float(smin < ILL_CONDITIONED), **common))
    return rows


def run_mnist_sweep(cfg: ExperimentConfig, data: dict | None = None) -> ResultTable:
    """Class-balanced MNIST accuracy across depths (at ``d_hidden``) and widths (at ``width_depth``).

    ``data`` may supply the four arrays of :func:`load_mnist` directly.
    Pixels are scaled by 1/255 and then by one factor fitted on the
    training pool so the mean squared row norm is 1.
    """
    data = dict(data) if data is not None else load_mnist(cfg.mnist_dir)
    data["X_train"], scale = normalize_mnist(data["train_images"])
    data["X_test"], _ = normalize_mnist(data["test_images"], scale)
    points = [(L, cfg.d_hidden) for L in cfg.depths] + [(cfg.width_depth, w) for w in cfg.widths]
    points = list(dict.fromkeys(points))
    jobs = [(cfg, data, s, L, w, t) for s, (L, w) in enumerate(points) for t in range(cfg.trials)]
    rows = [r for part in _pool_map(_mnist_trial, jobs, cfg) for r in part]
    return ResultTable.from_members(rows, _paired_gaps(rows, "accuracy", relative=False))


# ---------------------------------------------------------------------------
# theory


def _theory_value(activation, dims, n, method, cfg):
    inp = theory_input(dims, n, activation)
    if method == "mirror-saddle":
        return solve_mirror_saddle(inp, cfg.mirror).tau_sq
    sol = solve_sgd_system(inp, tol=cfg.tol, max_iter=cfg.max_iter * 100, method=method, closure=cfg.closure, fprime=cfg.fprime, source=cfg.source)
    return sol.tau_sq


def run_theory(cfg: ExperimentConfig) -> ResultTable:
    """Predicted test MSE for one architecture, one row per method."""
    dims = parse_dims(cfg.dims)
    rows = []
    for method in cfg.theory_methods:
        common = dict(experiment="theory", weight_kind="theory", L=len(dims) - 1, d=dims[0], d_hidden=dims[-1], n=cfg.n, n_test=0, seed=cfg.master_seed, mirror=cfg.mirror)
        try:
            rows.append(Row(metric=f"tau_sq_{method}", value=float(_theory_value(cfg.activation, dims, cfg.n, method, cfg)), **common))
        except RFError as exc:
            if len(cfg.theory_methods) == 1:
                raise
            rows.append(Row(metric=f"error_{method}:{exc.name}", value=1.0, **common))
    return ResultTable(rows, rows)


def _compare_trial(job):
    cfg, sweep, act, dims, n, trial = job
    seed = trial_seed(cfg.master_seed, trial, sweep)
    net_s, data_s, star_s, test_s = _sub_seeds(seed, 4)
    nets = _paired_networks(dims, act, cfg.weight_kinds, net_s)
    X = gen_synthetic(dims[0], n, data_s)
    a_star = sample_ground_truth(dims[-1], star_s).a_star
    rows = []
    for kind, net in nets.items():
        F = forward(net, X)
        res = _fit(F, F @ a_star, cfg.mirror, cfg.tol, cfg.max_iter)
        mse = empirical_mse(net, res.a, a_star, cfg.n_test, test_s)
        rows.append(Row("theory-compare", kind, len(dims) - 1, dims[0], dims[-1], n, cfg.n_test, seed, f"{cfg.mirror}|{act}", "mse", mse))
    return rows


def run_theory_compare(cfg: ExperimentConfig) -> ResultTable:
    """Theory rows next to empirical trial rows for each grid case.

    The ``mirror`` column carries ``mirror|activation``.  Theory failures
    (such as a degenerate width ratio) become ``error_<method>:<Name>``
    rows instead of exceptions.  The summary adds relative gaps
    ``|theory - mean| / mean`` per method and weight kind.
    """
    grid = parse_grid(cfg.grid)
    theory_rows = []
    for act, dims, n in grid:
        for method in cfg.theory_methods:
            common = dict(experiment="theory-compare", weight_kind="theory", L=len(dims) - 1, d=dims[0], d_hidden=dims[-1], n=n, n_test=cfg.n_test, seed=cfg.master_seed, mirror=f"{cfg.mirror}|{act}")
            try:
                theory_rows.append(Row(metric=f"tau_sq_{method}", value=float(_theory_value(act, dims, n, method, cfg)), **common))
            except RFError as exc:
                theory_rows.append(Row(metric=f"error_{method}:{exc.name}", value=1.0, **common))
    jobs = [(cfg, s, act, dims, n, t) for s, (act, dims, n) in enumerate(grid) for t in range(cfg.trials)]
    trial_rows = [r for part in _pool_map(_compare_trial, jobs, cfg) for r in part]
    aggs = aggregate(trial_rows)
    gaps = []
    for th in theory_rows:
        if not th.metric.startswith("tau_sq_"):
            continue
        for m in aggs:
            if m.metric == "mse.mean" and (m.L, m.d, m.d_hidden, m.n, m.mirror) == (th.L, th.d, th.d_hidden, th.n, th.mirror):
                gap = abs(th.value - m.value) / m.value
                gaps.append(m._replace(metric="rel_gap_" + th.metric[len("tau_sq_"):], value=float(gap)))
    table = ResultTable(trial_rows + theory_rows + aggs, aggs + theory_rows + gaps)
    return table


# ---------------------------------------------------------------------------
# kernel benchmark


def run_bench(cfg: ExperimentConfig) -> ResultTable:
    """Square ``d x d`` mat-vec timings of the dense and packed kernels."""
    rows = []
    for d in cfg.bench_dims:
        rep = bitpack.bench_kernel(d, d, reps=cfg.bench_reps, seed=cfg.master_seed)
        common = dict(experiment="bench", weight_kind="rademacher", L=1, d=d, d_hidden=d, n=0, n_test=0, seed=cfg.master_seed, mirror="none")
        for metric in ("speedup", "dense_ns", "packed_ns"):
            rows.append(Row(metric=metric, value=float(getattr(rep, metric)), **common))
        rows.append(Row(metric="dense_bytes", value=float(rep.dense_bytes), **common))
        rows.append(Row(metric="packed_bytes", value=float(rep.packed_bytes), **common))
        rows.append(Row(metric="memory_ratio", value=float(rep.memory_ratio), **common))
    return ResultTable(rows, rows)


RUNNERS = {
    "depth-sweep": run_depth_sweep,
    "mnist-sweep": run_mnist_sweep,
    "theory": run_theory,
    "theory-compare": run_theory_compare,
    "bench": run_bench,
}


def run(cfg: ExperimentConfig) -> ResultTable:
    if cfg.experiment not in RUNNERS:
        raise ConfigError("unknown experiment", experiment=cfg.experiment)
    return RUNNERS[cfg.experiment](cfg)


def with_overrides(cfg: ExperimentConfig, values: dict) -> ExperimentConfig:
    merged = cfg.as_strings()
    merged.update({k.replace("-", "_"): v for k, v in values.items()})
    return replace(cfg, **asdict(ExperimentConfig.from_mapping(merged)))
