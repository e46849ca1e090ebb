"""Tune the local-scale hyperparameter so the prior PVE matches a Beta belief.

The KL gradient is assembled per sample as

    d rho_m / d theta * (score_q(rho_m) - score_p(rho_m))

with score_q from the Stein estimator, score_p the analytic Beta score and
d rho / d theta from the tape through the reparametrized prior draws.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from . import diffcore as dc
from .priors import GsmPriorSpec, SpecError
from .pve import PveSampleSet, draw_prior_noise, pve_graph
from .stein import SteinConfig, stein_score

__all__ = [
    "DegenerateBatchError",
    "NumericalError",
    "BetaTarget",
    "MatchConfig",
    "MatchTrace",
    "KlGradient",
    "beta_score",
    "beta_log_density",
    "kl_estimate",
    "kl_gradient_step",
    "optimize_pve",
]


class DegenerateBatchError(ValueError):
    pass


class NumericalError(FloatingPointError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class BetaTarget:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("Beta shapes must be positive")

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)


def beta_score(rho, target: BetaTarget):
    """d/d rho log Beta(rho; a, b)."""
    r = np.asarray(rho, dtype=np.float64)
    if np.any((r <= 0) | (r >= 1)):
        raise ValueError("rho must lie strictly inside (0, 1)")
    out = (target.a - 1.0) / r - (target.b - 1.0) / (1.0 - r)
    return float(out) if out.ndim == 0 else out


def beta_log_density(rho, target: BetaTarget):
    r = np.asarray(rho, dtype=np.float64)
    return (special.xlogy(target.a - 1.0, r) + special.xlog1py(target.b - 1.0, -r)
            - special.betaln(target.a, target.b))


@dataclass(frozen=True)
class MatchConfig:
    steps: int = 200
    learning_rate: float = 0.05
    M: int = 256
    stein: SteinConfig = SteinConfig()
    clamp: float = 1e-4

    def __post_init__(self):
        if not 0 < self.clamp < 0.5:
            raise ValueError("clamp must lie in (0, 0.5)")
        if self.steps < 0 or self.M < 2 or not self.learning_rate > 0:
            raise ValueError("invalid match config")


@dataclass
class MatchTrace:
    theta: list = field(default_factory=list)
    kl: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    pve_mean: list = field(default_factory=list)
    pve_mode: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.theta)

    def record(self, theta, kl, grad, samples):
        self.theta.append(float(theta))
        self.kl.append(float(kl))
        self.grad_norm.append(abs(float(grad)))
        self.pve_mean.append(float(np.mean(samples)))
        hist, edges = np.histogram(samples, bins=20, range=(0.0, 1.0))
        k = int(np.argmax(hist))
        self.pve_mode.append(float(0.5 * (edges[k] + edges[k + 1])))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "theta", "kl", "grad_norm", "pve_mean"])
            for i in range(len(self)):
                w.writerow([i, repr(self.theta[i]), repr(self.kl[i]),
                            repr(self.grad_norm[i]), repr(self.pve_mean[i])])


def _samples(samples) -> np.ndarray:
    if isinstance(samples, PveSampleSet):
        return samples.samples
    return np.asarray(samples, dtype=np.float64)


def kl_estimate(samples, target: BetaTarget, clamp: float = 1e-4) -> float:
    """Monte-Carlo KL[q || p] with log q from a Gaussian KDE (Silverman bandwidth).

    Diagnostics only: the KDE is never differentiated.
    """
    rho = _samples(samples)
    if rho.size < 10:
        raise ValueError("kl_estimate needs at least 10 samples")
    r = np.clip(rho, clamp, 1.0 - clamp)
    if np.ptp(r) == 0:
        # KDE is singular; fall back to a tiny fixed bandwidth.
        log_q = np.full(r.size, -math.log(math.sqrt(2 * math.pi) * clamp))
    else:
        log_q = np.log(stats.gaussian_kde(r, bw_method="silverman")(r))
    return float(np.mean(log_q - beta_log_density(r, target)))


@dataclass
class KlGradient:
    grad: float
    kl: float
    samples: np.ndarray
    stein_term: float
    prior_term: float
    drho: np.ndarray


def _check_optimizable(spec: GsmPriorSpec) -> float:
    try:
        return spec.theta
    except SpecError as exc:
        raise SpecError("matching needs one shared delta or inverse-gamma local prior") from exc


def kl_gradient_step(spec: GsmPriorSpec, theta: float, X, target: BetaTarget,
                     config: MatchConfig, rng: np.random.Generator) -> KlGradient:
    """One Monte-Carlo estimate of d KL / d theta at ``theta``."""
    _check_optimizable(spec)
    if not theta > 0:
        raise ValueError("theta must be positive")
    spec = spec.with_theta(theta)
    noise = draw_prior_noise(spec, config.M, rng)
    tape = dc.Tape()
    th = tape.var(np.full(config.M, theta))
    rho, _ = pve_graph(tape, spec, th, noise, X)
    drho = dc.backward(tape, dc.sum_(rho))[th]
    r = np.clip(rho.value, config.clamp, 1.0 - config.clamp)
    if np.all(r == r[0]) and r[0] in (config.clamp, 1.0 - config.clamp):
        raise DegenerateBatchError(f"all PVE samples clamped to {r[0]}; move theta")
    score_q = stein_score(r, config.stein).scores[:, 0]
    score_p = beta_score(r, target)
    stein_term = float(np.mean(drho * score_q))
    prior_term = float(np.mean(drho * score_p))
    return KlGradient(
        grad=stein_term - prior_term,
        kl=kl_estimate(rho.value, target, config.clamp),
        samples=rho.value.copy(),
        stein_term=stein_term,
        prior_term=prior_term,
        drho=drho,
    )


def optimize_pve(spec: GsmPriorSpec, theta0: float, X, target: BetaTarget,
                 config: MatchConfig, rng: np.random.Generator):
    """Gradient descent on log(theta). Returns ``(theta*, MatchTrace)``."""
    _check_optimizable(spec)
    log_theta = math.log(theta0)
    trace = MatchTrace()
    for _ in range(config.steps):
        theta = math.exp(log_theta)
        est = kl_gradient_step(spec, theta, X, target, config, rng)
        if not math.isfinite(est.grad):
            raise NumericalError("non-finite KL gradient", trace)
        trace.record(theta, est.kl, est.grad, est.samples)
        log_theta -= config.learning_rate * est.grad * theta
    return math.exp(log_theta), trace
