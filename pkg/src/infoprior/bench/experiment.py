"""Experiment orchestration: seeding, work pool, result files, cross-validation."""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .. import oracle, vi
from ..matcher import BetaTarget, MatchConfig, kl_estimate, optimize_pve
from ..priors import (
    BinomialCount,
    FlattenedLaplace,
    GsmPriorSpec,
    spec_from_config,
)
from ..pve import pve_of_fit, pve_prior_samples
from ..stein import SteinConfig
from . import plots
from .config import Config, ConfigError, update
from .data import (
    DataError,
    Dataset,
    SynthConfig,
    extend_dataset,
    load_csv,
    standardize_split,
    synth_generate,
    synth_regression,
)

__all__ = [
    "ResultRow",
    "replicate_rng",
    "run_pool",
    "write_results",
    "read_results",
    "summarize",
    "write_summary",
    "build_dataset",
    "build_prior",
    "train_config",
    "match_config",
    "CvResult",
    "cv_grid",
    "ExperimentConfig",
    "run_experiment",
    "run_fit",
    "run_feature_select",
    "run_match",
    "run_simulate",
    "run_cv",
    "run_report",
]

RESULTS_HEADER = ["replicate", "prior", "dataset", "metric", "value"]

# stream tags keep data, splits and inference noise on separate seed streams
_DATA, _SPLIT, _TRAIN, _MATCH, _GIBBS, _FOLDS, _PREDICT = range(7)


def replicate_rng(master: int, *key: int) -> np.random.Generator:
    """Independent generator for (master seed, replicate index, ...) via SeedSequence hashing."""
    return np.random.default_rng(np.random.SeedSequence([int(master), *map(int, key)]))


def replicate_seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence([int(master), *map(int, key)]).generate_state(1)[0])


def run_pool(fn, tasks, threads: int = 1) -> list:
    """Apply ``fn`` to every task; results come back in task order.

    Each task owns its RNG and tape, and BLAS is pinned to one thread so the
    arithmetic does not depend on the pool size.
    """
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    tasks = list(tasks)
    with threadpool_limits(limits=1):
        if threads == 1 or len(tasks) <= 1:
            return [fn(t) for t in tasks]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# result files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResultRow:
    replicate: int
    prior: str
    dataset: str
    metric: str
    value: float


def write_results(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for r in rows:
            w.writerow([r.replicate, r.prior, r.dataset, r.metric, repr(float(r.value))])


def read_results(path) -> list:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != RESULTS_HEADER:
                raise DataError(f"{path}: expected header {','.join(RESULTS_HEADER)}")
            return [ResultRow(int(r[0]), r[1], r[2], r[3], float(r[4])) for r in reader]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def summarize(rows) -> list:
    """Per (prior, dataset, metric): mean, 1.96 * SEM and count of finite values."""
    groups = {}
    for r in rows:
        groups.setdefault((r.prior, r.dataset, r.metric), []).append(r.value)
    out = []
    for (prior, dataset, metric), vals in sorted(groups.items()):
        v = np.asarray(vals, dtype=np.float64)
        v = v[np.isfinite(v)]
        n = int(v.size)
        mean = float(v.mean()) if n else math.nan
        sem = float(1.96 * v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        out.append({"prior": prior, "dataset": dataset, "metric": metric,
                    "mean": mean, "sem196": sem, "n": n})
    return out


def write_summary(entries, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(entries, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# config -> objects
# ---------------------------------------------------------------------------


def build_dataset(cfg: Config, master: int) -> Dataset:
    """Raw (unsplit) dataset from ``dataset.*`` keys, extended when requested."""
    path = cfg.get_str("dataset.path")
    if path:
        ds = load_csv(path, cfg.get_str("dataset.target", "y"))
    else:
        rows = cfg.get_int("dataset.synthetic_rows", 1000)
        feats = cfg.get_int("dataset.synthetic_features", 8)
        ds = synth_regression(rows, feats, replicate_rng(master, _DATA),
                              cfg.get_float("dataset.synthetic_noise", 0.1))
    if cfg.get_bool("dataset.extend", False):
        ds = extend_dataset(ds, cfg.get_int("dataset.n_irrelevant", 100),
                            cfg.get_float("dataset.target_pve", 0.2),
                            replicate_rng(master, _DATA, 1))
    return ds


def dataset_name(cfg: Config) -> str:
    name = cfg.get_str("dataset.name")
    if name:
        return name
    path = cfg.get_str("dataset.path")
    base = os.path.splitext(os.path.basename(path))[0] if path else "synthetic"
    return base + ("-extended" if cfg.get_bool("dataset.extend", False) else "")


def build_prior(cfg: Config, D: int) -> GsmPriorSpec:
    """Prior for D inputs; without ``prior.widths`` the default is D-100-1."""
    if "prior.widths" not in cfg:
        hidden = cfg.get_list("prior.hidden", int, "100")
        cfg = update(cfg, {"prior.widths": ",".join(str(w) for w in [D, *hidden, 1])})
    spec = spec_from_config(cfg)
    if spec.network.widths[0] != D:
        raise ConfigError(f"prior.widths starts at {spec.network.widths[0]} but data has {D} features")
    return spec


def prior_name(cfg: Config) -> str:
    return cfg.get_str("prior.name", "prior")


def train_config(cfg: Config, seed: int) -> vi.TrainConfig:
    return vi.TrainConfig(
        epochs=cfg.get_int("train.epochs", 100),
        batch_size=cfg.get_int("train.batch_size", 100),
        learning_rate=cfg.get_float("train.learning_rate", 1e-2),
        samples=cfg.get_int("train.samples", 1),
        seed=seed,
        temp_start=cfg.get_float("train.temp_start", 1.0),
        temp_end=cfg.get_float("train.temp_end", 0.1),
    )


def match_config(cfg: Config) -> MatchConfig:
    return MatchConfig(
        steps=cfg.get_int("match.steps", 200),
        learning_rate=cfg.get_float("match.learning_rate", 0.05),
        M=cfg.get_int("match.samples", 256),
        stein=SteinConfig(eta=cfg.get_float("match.eta", 0.1)),
        clamp=cfg.get_float("match.clamp", 1e-4),
    )


def _target(cfg: Config) -> BetaTarget:
    return BetaTarget(cfg.get_float("match.a", 1.0), cfg.get_float("match.b", 1.0))


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


@dataclass
class CvResult:
    best: dict
    table: list  # rows: (point dict, fold, validation PVE or nan)
    failed: list = field(default_factory=list)

    def scores(self) -> dict:
        out = {}
        for point, _, score in self.table:
            out.setdefault(tuple(sorted(point.items())), []).append(score)
        return {k: float(np.mean(v)) for k, v in out.items()}

    def to_csv(self, path) -> None:
        keys = sorted(self.table[0][0]) if self.table else []
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys + ["fold", "val_pve"])
            for point, fold, score in self.table:
                w.writerow([point[k] for k in keys] + [fold, repr(float(score))])


def _fold_indices(n: int, folds: int, rng) -> list:
    perm = rng.permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _fit_score(ds: Dataset, train_idx, val_idx, spec, tcfg, predict_S, predict_seed) -> float:
    fold = Dataset(ds.X, ds.y, ds.feature_names, ds.standardization, train_idx, val_idx)
    post = vi.train(fold, spec, tcfg)
    pred = vi.predict_mean(post, fold.X_test, predict_S, np.random.default_rng(predict_seed))
    return pve_of_fit(fold.y_test, pred)


def cv_grid(ds: Dataset, family, grids: dict, folds: int = 5, tcfg: vi.TrainConfig | None = None,
            master: int = 0, threads: int = 1, predict_S: int = 20) -> CvResult:
    """K-fold CV on the training split over the product of ``grids``.

    ``family(point) -> GsmPriorSpec``. The best point maximizes mean
    validation PVE; exact ties go to the smallest values, which regularize
    most. Every grid point sees the same folds and training seeds, so the
    selection does not depend on the order in which grid values are listed.
    """
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise ConfigError("CV grids must be non-empty")
    if folds < 2:
        raise ConfigError("need at least 2 folds")
    tcfg = tcfg or vi.TrainConfig()
    names = sorted(grids)
    values = [sorted(set(float(v) for v in grids[k])) for k in names]
    points = [dict(zip(names, combo)) for combo in itertools.product(*values)]
    train = ds.train_idx
    parts = _fold_indices(train.size, folds, replicate_rng(master, _FOLDS))
    tasks = [(p, k) for p in points for k in range(folds)]

    def run(task):
        point, k = task
        val = train[parts[k]]
        tr = train[np.concatenate([parts[j] for j in range(folds) if j != k])]
        seed = replicate_seed(master, _TRAIN, k)
        cfg_k = vi.TrainConfig(**{**tcfg.__dict__, "seed": seed})
        try:
            return _fit_score(ds, np.sort(tr), val, family(point), cfg_k, predict_S,
                              replicate_seed(master, _PREDICT, k))
        except (FloatingPointError, np.linalg.LinAlgError):
            return math.nan

    scores = run_pool(run, tasks, threads)
    table = [(p, k, s) for (p, k), s in zip(tasks, scores)]
    failed = sorted({tuple(sorted(p.items())) for p, _, s in table if not math.isfinite(s)})
    means = {}
    for p, _, s in table:
        key = tuple(p[n] for n in names)
        if tuple(sorted(p.items())) not in failed:
            means.setdefault(key, []).append(s)
    if not means:
        raise FloatingPointError("every grid point failed in cross-validation")
    best_key = min(means, key=lambda k: (-float(np.mean(means[k])), k))
    return CvResult(dict(zip(names, best_key)), table, [dict(f) for f in failed])


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    kind: str  # "fit" or "feature-select"
    config: Config
    seed: int = 0
    out_dir: str = "out"
    threads: int = 1
    plots: bool = True

    @property
    def replicates(self) -> int:
        n = self.config.get_int("replicates", 1)
        if n < 1:
            raise ConfigError("replicates must be >= 1")
        return n


def run_experiment(exp: ExperimentConfig) -> list:
    os.makedirs(exp.out_dir, exist_ok=True)
    if exp.kind == "fit":
        return run_fit(exp)
    if exp.kind == "feature-select":
        return run_feature_select(exp)
    raise ConfigError(f"unknown experiment kind {exp.kind!r}")


def _finish(exp: ExperimentConfig, rows: list, metric_for_plot: str) -> list:
    write_results(rows, os.path.join(exp.out_dir, "results.csv"))
    entries = summarize(rows)
    write_summary(entries, os.path.join(exp.out_dir, "summary.json"))
    if exp.plots and any(e["metric"] == metric_for_plot for e in entries):
        plots.bar_svg(os.path.join(exp.out_dir, f"{metric_for_plot}.svg"), entries, metric_for_plot)
    finite = [r for r in rows if r.metric != "failed"]
    if not finite:
        raise FloatingPointError("all replicates failed")
    return rows


def _write_network(cfg: Config, spec: GsmPriorSpec, out_dir: str) -> None:
    """Record the architecture; a bias policy left at its default is flagged as such."""
    _write_json({"widths": list(spec.network.widths), "bias": spec.network.bias,
                 "bias_is_default": "prior.bias" not in cfg},
                os.path.join(out_dir, "network.json"))


def _match_rows(cfg: Config, X):
    """Inputs for PVE simulation: the training X, optionally truncated by ``match.rows``."""
    X = np.asarray(X)
    rows = cfg.get_int("match.rows", 0)
    return X[:rows] if rows > 0 else X


def _match_theta(cfg: Config, spec: GsmPriorSpec, X, master: int, out_dir: str | None):
    """Run PVE matching; persist the trace and post-match samples when ``out_dir`` is set."""
    Xm = _match_rows(cfg, X)
    theta0 = cfg.get_float("match.theta0", spec.theta)
    target = _target(cfg)
    theta, trace = optimize_pve(spec, theta0, Xm, target, match_config(cfg), replicate_rng(master, _MATCH))
    if out_dir:
        trace.to_csv(os.path.join(out_dir, "match_trace.csv"))
        M = cfg.get_int("pve.samples", 50)
        samples = pve_prior_samples(spec.with_theta(theta), Xm, M, replicate_rng(master, _MATCH, 1))
        samples.to_csv(os.path.join(out_dir, "pve_samples.csv"))
    return theta, trace, target


def run_fit(exp: ExperimentConfig) -> list:
    cfg, master = exp.config, exp.seed
    raw = build_dataset(cfg, master)
    frac = cfg.get_float("dataset.train_fraction", 0.8)
    spec = build_prior(cfg, raw.D)
    S = cfg.get_int("train.predict_samples", 20)
    if cfg.get_bool("match.enabled", False):
        first = standardize_split(raw, frac, replicate_seed(master, _SPLIT, 0))
        theta, _, _ = _match_theta(cfg, spec, first.X_train, master, exp.out_dir)
        spec = spec.with_theta(theta)
    name, dname = prior_name(cfg), dataset_name(cfg)

    def replicate(r):
        ds = standardize_split(raw, frac, replicate_seed(master, _SPLIT, r))
        tcfg = train_config(cfg, replicate_seed(master, _TRAIN, r))
        try:
            post = vi.train(ds, spec, tcfg)
        except vi.DivergenceError:
            return r, None, [ResultRow(r, name, dname, "failed", 1.0)]
        rng = replicate_rng(master, _PREDICT, r)
        test = pve_of_fit(ds.y_test, vi.predict_mean(post, ds.X_test, S, rng))
        train = pve_of_fit(ds.y_train, vi.predict_mean(post, ds.X_train, S, rng))
        return r, post, [ResultRow(r, name, dname, "test_pve", test),
                         ResultRow(r, name, dname, "train_pve", train)]

    outcomes = run_pool(replicate, range(exp.replicates), exp.threads)
    _write_network(cfg, spec, exp.out_dir)
    rows = []
    for r, post, rrows in outcomes:
        rows.extend(rrows)
        if post is not None:
            with open(os.path.join(exp.out_dir, f"posterior_r{r}.json"), "w", encoding="utf-8") as fh:
                fh.write(post.to_json())
    return _finish(exp, rows, "test_pve")


def feature_select_priors(cfg: Config, n: int) -> dict:
    """Count priors for the oracle study, keyed by label."""
    names = cfg.get_list("oracle.priors", str, "InfoSS,DeltaSS")
    out = {}
    for label in names:
        key = label.lower()
        if key == "infoss":
            out[label] = FlattenedLaplace(n, cfg.get_int("oracle.infoss_lower", 0),
                                          cfg.get_int("oracle.infoss_upper", 30),
                                          cfg.get_float("oracle.infoss_precision", 5.0))
        elif key == "deltass":
            out[label] = BinomialCount(n, cfg.get_float("oracle.deltass_p", 0.05))
        else:
            raise ConfigError(f"unknown oracle prior {label!r} (expected InfoSS or DeltaSS)")
    return out


def run_feature_select(exp: ExperimentConfig) -> list:
    """Sparse-signal study on y = w + eps with Gibbs inference under each count prior.

    The slab sd equals the signal level A (matched slab).
    """
    cfg, master = exp.config, exp.seed
    n, p0 = cfg.get_int("synth.n", 400), cfg.get_int("synth.p0", 20)
    levels = cfg.get_list("synth.A", float, "10")
    noises = cfg.get_list("synth.noise_sd", float, "2")
    iters = cfg.get_int("oracle.iters", 3000)
    burn = cfg.get_int("oracle.burn_in", 500)
    priors = feature_select_priors(cfg, n)
    tasks = [(r, ai, si) for ai in range(len(levels)) for si in range(len(noises))
             for r in range(exp.replicates)]

    def replicate(task):
        r, ai, si = task
        A, sd = levels[ai], noises[si]
        sc = SynthConfig(n, p0, A, sd)
        ds, w = synth_generate(sc, replicate_rng(master, r, _DATA, ai, si))
        dname = f"A={A:g}/sigma={sd:g}"
        rows = []
        for pi, (label, count) in enumerate(priors.items()):
            model = oracle.LinearSsModel(ds.y, sd, A, count)
            summ = oracle.gibbs_sample(model, iters, burn, replicate_rng(master, r, _GIBBS, ai, si, pi))
            rows.append(ResultRow(r, label, dname, "mse", oracle.mse_signal(summ, w)))
            rows.append(ResultRow(r, label, dname, "true_inclusion", float(summ.inclusion[:p0].mean())))
            rows.append(ResultRow(r, label, dname, "false_inclusion", float(summ.inclusion[p0:].mean())))
        return rows

    rows = [row for rs in run_pool(replicate, tasks, exp.threads) for row in rs]
    return _finish(exp, rows, "mse")


def _split_for_tools(cfg: Config, master: int) -> Dataset:
    raw = build_dataset(cfg, master)
    return standardize_split(raw, cfg.get_float("dataset.train_fraction", 0.8),
                             replicate_seed(master, _SPLIT, 0))


def run_simulate(cfg: Config, master: int, out_dir: str, make_plots: bool = True) -> dict:
    ds = _split_for_tools(cfg, master)
    spec = build_prior(cfg, ds.D)
    X = _match_rows(cfg, ds.X_train)
    samples = pve_prior_samples(spec, X, cfg.get_int("pve.samples", 50), replicate_rng(master, _MATCH, 1))
    os.makedirs(out_dir, exist_ok=True)
    samples.to_csv(os.path.join(out_dir, "pve_samples.csv"))
    stats = {"mean": float(samples.samples.mean()), "sd": float(samples.samples.std()),
             "n": len(samples), "theta": spec.theta}
    _write_json(stats, os.path.join(out_dir, "pve_summary.json"))
    if make_plots:
        plots.hist_svg(os.path.join(out_dir, "pve_hist.svg"), [("prior PVE", samples.samples)])
    return stats


def run_match(cfg: Config, master: int, out_dir: str, make_plots: bool = True) -> dict:
    ds = _split_for_tools(cfg, master)
    spec = build_prior(cfg, ds.D)
    os.makedirs(out_dir, exist_ok=True)
    X = _match_rows(cfg, ds.X_train)
    M = cfg.get_int("pve.samples", 50)
    theta0 = cfg.get_float("match.theta0", spec.theta)
    before = pve_prior_samples(spec.with_theta(theta0), X, M, replicate_rng(master, _MATCH, 2))
    theta, trace, target = _match_theta(cfg, spec, ds.X_train, master, out_dir)
    after = pve_prior_samples(spec.with_theta(theta), X, M, replicate_rng(master, _MATCH, 1))
    clamp = cfg.get_float("match.clamp", 1e-4)
    result = {
        "theta0": theta0,
        "theta": theta,
        "target_a": target.a,
        "target_b": target.b,
        "target_mean": target.mean,
        "pve_mean_initial": float(before.samples.mean()),
        "pve_mean_final": float(after.samples.mean()),
        "kl_initial": kl_estimate(before.samples, target, clamp),
        "kl_final": kl_estimate(after.samples, target, clamp),
    }
    _write_json(result, os.path.join(out_dir, "matched.json"))
    if make_plots:
        plots.hist_svg(os.path.join(out_dir, "pve_hist.svg"),
                       [("initial", before.samples), ("matched", after.samples)],
                       target=(target.a, target.b))
        plots.line_svg(os.path.join(out_dir, "match_trace.svg"), {"KL": trace.kl}, ylabel="KL")
    return result


def run_cv(cfg: Config, master: int, out_dir: str, threads: int = 1, make_plots: bool = True):
    """Cross-validate ``cv.*`` grids for the configured prior, then refit on the training split."""
    ds = _split_for_tools(cfg, master)
    grids = {}
    for key, target_key in (("cv.local_scale", "prior.local_scale"),
                            ("cv.indicator_p", "prior.indicator_p")):
        vals = cfg.get_list(key, float)
        if vals is not None:
            grids[target_key] = vals
    if not grids:
        raise ConfigError("cv needs cv.local_scale and/or cv.indicator_p (or --paper-grids)")
    if "prior.local_scale" in grids and cfg.get_str("prior.local", "delta") != "delta":
        raise ConfigError("cv.local_scale needs prior.local = delta")
    if "prior.indicator_p" in grids and cfg.get_str("prior.input_indicator", "none") != "bernoulli":
        del grids["prior.indicator_p"]
        if not grids:
            raise ConfigError("cv.indicator_p needs prior.input_indicator = bernoulli")

    def family(point):
        return build_prior(update(cfg, {k: repr(v) for k, v in point.items()}), ds.D)

    tcfg = train_config(cfg, 0)
    res = cv_grid(ds, family, grids, cfg.get_int("cv.folds", 5), tcfg, master, threads,
                  cfg.get_int("train.predict_samples", 20))
    os.makedirs(out_dir, exist_ok=True)
    res.to_csv(os.path.join(out_dir, "cv_table.csv"))
    _write_json({"best": res.best, "failed": res.failed}, os.path.join(out_dir, "cv_best.json"))

    spec = family(res.best)
    _write_network(cfg, spec, out_dir)
    post = vi.train(ds, spec, train_config(cfg, replicate_seed(master, _TRAIN, 0)))
    pred = vi.predict_mean(post, ds.X_test, cfg.get_int("train.predict_samples", 20),
                           replicate_rng(master, _PREDICT, 0))
    name = prior_name(cfg) + "+CV"
    rows = [ResultRow(0, name, dataset_name(cfg), "test_pve", pve_of_fit(ds.y_test, pred))]
    write_results(rows, os.path.join(out_dir, "results.csv"))
    write_summary(summarize(rows), os.path.join(out_dir, "summary.json"))
    return res, rows


def run_report(results_path: str, out_dir: str, make_plots: bool = True) -> list:
    rows = read_results(results_path)
    entries = summarize(rows)
    os.makedirs(out_dir, exist_ok=True)
    write_summary(entries, os.path.join(out_dir, "summary.json"))
    if make_plots:
        for metric in sorted({e["metric"] for e in entries}):
            plots.bar_svg(os.path.join(out_dir, f"{metric}.svg"), entries, metric)
    return entries
