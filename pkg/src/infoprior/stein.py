"""Stein gradient estimator for the score of an implicit distribution.

Given samples ``z_1..z_K`` from q, the score ``grad log q(z_k)`` is estimated
by kernel ridge regression on Stein's identity with an RBF kernel::

    G = -(K + eta I)^{-1} B,   B_ij = sum_k dK(z_i, z_k) / dz_k[j]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist, squareform

__all__ = ["SolverError", "SteinConfig", "ScoreEstimate", "rbf_kernel", "stein_score"]


class SolverError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SteinConfig:
    eta: float = 0.1
    bandwidth: float | None = None  # None selects the median heuristic

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("fixed bandwidth must be positive")


@dataclass
class ScoreEstimate:
    scores: np.ndarray  # (K, d)
    kernel: np.ndarray  # (K, K)
    samples: np.ndarray
    bandwidth: float


def _as_samples(samples) -> np.ndarray:
    z = np.asarray(samples, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("need a (K, d) sample matrix with K >= 2")
    return z


def median_bandwidth(z: np.ndarray) -> float:
    d = pdist(z)
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def rbf_kernel(samples, config: SteinConfig = SteinConfig()):
    """Return ``(K, h)`` with K_ij = exp(-|z_i - z_j|^2 / (2 h^2))."""
    z = _as_samples(samples)
    h = config.bandwidth if config.bandwidth is not None else median_bandwidth(z)
    sq = squareform(pdist(z, "sqeuclidean"))
    return np.exp(-sq / (2.0 * h * h)), h


def stein_score(samples, config: SteinConfig = SteinConfig()) -> ScoreEstimate:
    z = _as_samples(samples)
    K, h = rbf_kernel(z, config)
    # sum_k dK(z_i, z_k)/dz_k = sum_k K_ik (z_i - z_k) / h^2
    B = (K.sum(axis=1)[:, None] * z - K @ z) / (h * h)
    A = K + config.eta * np.eye(len(z))
    try:
        factor = linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        hint = " (use eta > 0)" if config.eta == 0 else ""
        raise SolverError(f"kernel system is not positive definite{hint}") from exc
    pivots = np.abs(np.diag(factor[0]))
    if config.eta == 0 and pivots.min() ** 2 < 1e-12 * A.diagonal().max():
        raise SolverError("kernel matrix is numerically singular; use eta > 0")
    G = -linalg.cho_solve(factor, B, check_finite=False)
    if not np.all(np.isfinite(G)):
        raise SolverError("kernel solve produced non-finite scores; use eta > 0")
    return ScoreEstimate(G, K, z, h)
