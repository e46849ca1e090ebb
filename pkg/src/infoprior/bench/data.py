"""Datasets: CSV ingestion, standardized splits, synthetic generators."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "DataError",
    "Standardization",
    "Dataset",
    "SynthConfig",
    "load_csv",
    "save_csv",
    "standardize_split",
    "synth_generate",
    "synth_regression",
    "extend_dataset",
]


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Standardization:
    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: float
    y_sd: float

    def destandardize_y(self, y):
        return np.asarray(y) * self.y_sd + self.y_mean


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list
    standardization: Standardization | None = None
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise DataError("X must be N x D and y of length N")
        if len(self.feature_names) != self.X.shape[1]:
            raise DataError("one feature name per column required")
        if np.isnan(self.X).any() or np.isnan(self.y).any():
            raise DataError("dataset contains NaN")
        if self.train_idx is None:
            self.train_idx = np.arange(self.X.shape[0])

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def D(self) -> int:
        return self.X.shape[1]

    @property
    def X_train(self):
        return self.X[self.train_idx]

    @property
    def y_train(self):
        return self.y[self.train_idx]

    @property
    def X_test(self):
        return self.X[self.test_idx]

    @property
    def y_test(self):
        return self.y[self.test_idx]


def load_csv(path, target: str) -> Dataset:
    """Numeric UTF-8 CSV with a header row; ``target`` names the response column."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if target not in header:
        raise DataError(f"{path}: target column {target!r} not in header {header}")
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise DataError(f"{path}: no data rows after the header")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        line = i + 2  # 1-based, header is line 1
        if len(row) != len(header):
            raise DataError(f"{path}: row {line} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise DataError(f"{path}: row {line}, column {header[j]!r}: "
                                f"non-numeric or missing value {cell!r}")
            values[i, j] = v
    t = header.index(target)
    names = [h for j, h in enumerate(header) if j != t]
    X = np.delete(values, t, axis=1)
    return Dataset(X, values[:, t], names)


def save_csv(ds: Dataset, path, target: str = "y") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(ds.feature_names) + [target])
        for xi, yi in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def standardize_split(ds: Dataset, train_fraction: float = 0.8, seed: int = 0) -> Dataset:
    """Shuffle, split, and standardize features and target by train statistics.

    Constant training features are dropped with a warning.
    """
    if ds.N < 5:
        raise DataError("need at least 5 rows to split")
    if not 0 < train_fraction <= 1:
        raise DataError("train fraction must lie in (0, 1]")
    perm = np.random.default_rng(seed).permutation(ds.N)
    n_train = max(2, int(round(train_fraction * ds.N)))
    train, test = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    Xtr = ds.X[train]
    sd = Xtr.std(axis=0)
    keep = sd > 0
    if not keep.all():
        dropped = [n for n, k in zip(ds.feature_names, keep) if not k]
        warnings.warn(f"dropping constant features: {', '.join(dropped)}", stacklevel=2)
    X = ds.X[:, keep]
    mean, sd = Xtr[:, keep].mean(axis=0), sd[keep]
    y_mean, y_sd = float(ds.y[train].mean()), float(ds.y[train].std())
    if not y_sd > 0:
        raise DataError("target is constant on the training split")
    rec = Standardization(mean, sd, y_mean, y_sd)
    names = [n for n, k in zip(ds.feature_names, keep) if k]
    return Dataset((X - mean) / sd, (ds.y - y_mean) / y_sd, names, rec, train, test)


@dataclass(frozen=True)
class SynthConfig:
    """Sparse-signal model y = w + eps with the first p0 signals at level A."""

    n: int = 400
    p0: int = 20
    A: float = 6.0
    noise_sd: float = 2.0

    def __post_init__(self):
        if not 0 <= self.p0 <= self.n:
            raise DataError("need 0 <= p0 <= n")
        if not (self.A > 0 and self.noise_sd >= 0):
            raise DataError("A must be positive and noise_sd nonnegative")

    def true_signal(self) -> np.ndarray:
        w = np.zeros(self.n)
        w[:self.p0] = self.A
        return w


def synth_generate(config: SynthConfig, rng: np.random.Generator):
    """Returns ``(Dataset with X = I, true w)``."""
    w = config.true_signal()
    y = w + config.noise_sd * rng.standard_normal(config.n)
    names = [f"x{i + 1}" for i in range(config.n)]
    return Dataset(np.eye(config.n), y, names), w


def synth_regression(n: int, D: int, rng: np.random.Generator, noise_sd: float = 0.1) -> Dataset:
    """Smooth nonlinear regression on D >= 4 standard-normal features (harness default data)."""
    if D < 4:
        raise DataError("synthetic regression needs D >= 4")
    X = rng.standard_normal((n, D))
    f = (X[:, 0] + 0.8 * X[:, 1] - 0.6 * X[:, 2] + np.sin(2.0 * X[:, 3])
         + 0.5 * X[:, 0] * X[:, 1])
    y = f + noise_sd * rng.standard_normal(n)
    return Dataset(X, y, [f"x{i + 1}" for i in range(D)])


def extend_dataset(ds: Dataset, n_irrelevant: int = 100, target_pve: float = 0.2,
                   rng: np.random.Generator | None = None) -> Dataset:
    """Append irrelevant N(0, 1) columns and add noise so the original y explains at most target_pve."""
    if not 0 < target_pve <= 1:
        raise DataError("target_pve must lie in (0, 1]")
    if n_irrelevant < 0:
        raise DataError("n_irrelevant must be >= 0")
    rng = rng if rng is not None else np.random.default_rng(0)
    extra = rng.standard_normal((ds.N, n_irrelevant))
    X = np.concatenate([ds.X, extra], axis=1)
    names = list(ds.feature_names) + [f"irrelevant{i + 1}" for i in range(n_irrelevant)]
    if target_pve == 1:
        y = ds.y.copy()
    else:
        var = float(ds.y.var()) * (1.0 / target_pve - 1.0)
        y = ds.y + math.sqrt(var) * rng.standard_normal(ds.N)
    return replace(ds, X=X, y=y, feature_names=names, standardization=None,
                   train_idx=ds.train_idx.copy(), test_idx=ds.test_idx.copy())
