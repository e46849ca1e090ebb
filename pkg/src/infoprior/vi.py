"""Stochastic variational inference for ReLU regression networks.

Each weight is ``w = sigma * beta * lam * tau``. The approximate posterior is

* a diagonal Gaussian over every ``beta``,
* a binary-concrete relaxation over each indicated input node ``tau``,
* point estimates (in log space) for inverse-gamma local scales ``lam`` and
  for the noise sd ``sigma_eps``.

Global scales below the output layer are fixed at 1 and the output-layer
scale is tied to ``sigma_eps``, which is the parametrization under which the
prior PVE is ``V / (V + 1)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import diffcore as dc
from .priors import (
    BernoulliIndicators,
    CountPrior,
    DeltaScale,
    GsmPriorSpec,
    InvGammaScale,
    JointCountIndicators,
    NoIndicators,
    SpecError,
    spec_from_config,
    spec_to_config,
)
from .pve import forward

__all__ = [
    "DivergenceError",
    "VariationalParams",
    "TrainConfig",
    "Posterior",
    "ElboNoise",
    "draw_elbo_noise",
    "init_params",
    "gaussian_entropy",
    "relaxed_indicator_sample",
    "joint_prior_relaxed_logprob",
    "elbo_terms",
    "elbo_estimate",
    "elbo_value_and_grad",
    "train",
    "predict_mean",
    "inclusion_probabilities",
]

POSTERIOR_FORMAT = "infoprior.posterior"
POSTERIOR_VERSION = 1

# Inv-Gamma(0.001, 0.001) on sigma_eps**2
NOISE_PRIOR = (1e-3, 1e-3)
_HALF_LOG_2PI_E = 0.5 * math.log(2 * math.pi * math.e)


class DivergenceError(FloatingPointError):
    """Training or ELBO evaluation produced a non-finite value."""

    def __init__(self, msg, sample_index=None, curve=None):
        super().__init__(msg)
        self.sample_index = sample_index
        self.curve = list(curve or [])


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class VariationalParams:
    """Named float64 arrays plus the relaxation temperature.

    Keys: ``mu{l}``, ``logstd{l}`` (fan_in x fan_out) for every layer,
    ``loglam{l}`` (fan_in,) for inverse-gamma layers, ``logit{l}`` (width,)
    for layers with indicators, and ``log_sigma_eps`` (scalar).
    """

    arrays: dict
    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    def keys(self) -> list:
        return sorted(self.arrays)

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.arrays[k]) for k in self.keys()])

    def unflatten(self, flat) -> "VariationalParams":
        flat = np.asarray(flat, dtype=np.float64)
        out, pos = {}, 0
        for k in self.keys():
            a = np.asarray(self.arrays[k])
            out[k] = flat[pos:pos + a.size].reshape(a.shape).copy()
            pos += a.size
        if pos != flat.size:
            raise ValueError("flat vector has the wrong length")
        return VariationalParams(out, self.temperature)

    def copy(self) -> "VariationalParams":
        return VariationalParams({k: np.array(v, dtype=np.float64) for k, v in self.arrays.items()},
                                 self.temperature)

    def std(self, l: int) -> np.ndarray:
        return np.exp(self.arrays[f"logstd{l}"])

    @property
    def sigma_eps(self) -> float:
        return float(np.exp(self.arrays["log_sigma_eps"]))


def _initial_log_lam(local: InvGammaScale) -> float:
    # log sqrt(E[lam^2]) when finite, otherwise start at lam = 1
    if local.shape > 1:
        return 0.5 * math.log(local.scale / (local.shape - 1.0))
    return 0.0


def init_params(prior: GsmPriorSpec, rng: np.random.Generator, mu_scale: float = 0.1,
                init_std: float = 0.1, init_logit: float = 0.0) -> VariationalParams:
    net = prior.network
    arrays = {}
    for l in range(net.n_layers):
        shape = (net.fan_in(l), net.widths[l + 1])
        arrays[f"mu{l}"] = mu_scale * rng.standard_normal(shape)
        arrays[f"logstd{l}"] = np.full(shape, math.log(init_std))
        local = prior.local[l]
        if isinstance(local, InvGammaScale):
            arrays[f"loglam{l}"] = np.full(shape[0], _initial_log_lam(local))
        ind = prior.indicators[l]
        if isinstance(ind, BernoulliIndicators) and not 0.0 < ind.p < 1.0:
            raise SpecError("variational indicators need 0 < p < 1")
        if not isinstance(ind, NoIndicators):
            arrays[f"logit{l}"] = np.full(net.widths[l], float(init_logit))
    arrays["log_sigma_eps"] = np.array(0.0)
    return VariationalParams(arrays)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 1e-2
    samples: int = 1
    seed: int = 0
    temp_start: float = 1.0
    temp_end: float = 0.1

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.samples) < 1:
            raise ValueError("epochs, batch_size and samples must be >= 1")
        if not (self.learning_rate > 0 and self.temp_start > 0 and self.temp_end > 0):
            raise ValueError("learning rate and temperatures must be positive")

    def temperature(self, epoch: int) -> float:
        """Geometric anneal from temp_start (first epoch) to temp_end (last epoch)."""
        if self.epochs == 1:
            return self.temp_end
        frac = epoch / (self.epochs - 1)
        return self.temp_start * (self.temp_end / self.temp_start) ** frac


@dataclass
class Posterior:
    params: VariationalParams
    elbo_curve: list
    prior: GsmPriorSpec
    config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def smoothed_curve(self) -> np.ndarray:
        """Running maximum of the per-epoch ELBO (monotone by construction)."""
        return np.maximum.accumulate(np.asarray(self.elbo_curve, dtype=np.float64))

    def inclusion(self, layer: int = 0) -> np.ndarray:
        return inclusion_probabilities(self.params, layer)

    def to_json(self) -> str:
        arrays = {k: {"shape": list(np.shape(v)), "data": [float(x) for x in np.ravel(v)]}
                  for k, v in sorted(self.params.arrays.items())}
        blob = {
            "format": POSTERIOR_FORMAT,
            "version": POSTERIOR_VERSION,
            "prior": spec_to_config(self.prior),
            "train": self.config.__dict__,
            "temperature": self.params.temperature,
            "elbo_curve": [float(v) for v in self.elbo_curve],
            "params": arrays,
        }
        return json.dumps(blob, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Posterior":
        blob = json.loads(text)
        if blob.get("format") != POSTERIOR_FORMAT:
            raise ValueError("not a serialized posterior")
        if blob.get("version") != POSTERIOR_VERSION:
            raise ValueError(f"unsupported posterior version {blob.get('version')}")
        arrays = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                  for k, v in blob["params"].items()}
        params = VariationalParams(arrays, blob["temperature"])
        return cls(params, blob["elbo_curve"], spec_from_config(blob["prior"]),
                   TrainConfig(**blob["train"]))


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def gaussian_entropy(logstd) -> dc.Node:
    """sum(log std) + n/2 log(2 pi e) for a diagonal Gaussian."""
    n = int(np.size(logstd.value if isinstance(logstd, dc.Node) else logstd))
    return dc.sum_(logstd) + n * _HALF_LOG_2PI_E


def _logistic_noise(rng, shape) -> np.ndarray:
    u = rng.random(shape)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return np.log(u) - np.log1p(-u)


def _concrete(logit, noise, temperature):
    return dc.sigmoid((logit + noise) * (1.0 / temperature))


def relaxed_indicator_sample(logit, temperature: float, rng: np.random.Generator, noise=None):
    """Binary-concrete draw sigmoid((logit + L) / t) with L ~ Logistic(0, 1).

    ``logit`` may be a tape node (the result then carries the reparametrized
    gradient) or a plain array.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    shape = logit.shape if isinstance(logit, dc.Node) else np.shape(logit)
    if noise is None:
        noise = _logistic_noise(rng, shape)
    if isinstance(logit, dc.Node):
        return _concrete(logit, noise, temperature)
    return expit((np.asarray(logit, dtype=np.float64) + noise) / temperature)


def joint_prior_relaxed_logprob(tau_soft, count: CountPrior) -> dc.Node:
    """log p_m(s) - log C(D, s) at the soft count s = sum(tau_soft).

    The binomial coefficient is interpolated with log-gamma, so the value is
    exact at binary corners.
    """
    if not isinstance(tau_soft, dc.Node):
        tape = dc.Tape()
        tau_soft = tape.const(np.asarray(tau_soft, dtype=np.float64))
    D = count.D
    if tau_soft.shape[-1] != D:
        raise SpecError(f"expected {D} indicators, got {tau_soft.shape[-1]}")
    s = dc.sum_(tau_soft, axis=-1)
    log_c = math.lgamma(D + 1) - dc.op_lgamma(s + 1.0) - dc.op_lgamma((D + 1.0) - s)
    return count.relaxed_log_pmf(s) - log_c


def _log_sq_invgamma_logspace(u, shape: float, scale: float):
    """log density of u = log(x) when x**2 ~ Inv-Gamma(shape, scale)."""
    const = shape * math.log(scale) - math.lgamma(shape) + math.log(2.0)
    return const - 2.0 * shape * u - scale * dc.exp(-2.0 * u)


@dataclass
class ElboNoise:
    """Standard-normal draws per layer (S, fan_in, fan_out) and logistic draws per indicated layer."""

    xi: list
    logistic: dict


def draw_elbo_noise(params: VariationalParams, prior: GsmPriorSpec, S: int,
                    rng: np.random.Generator) -> ElboNoise:
    if S < 1:
        raise ValueError("S must be >= 1")
    net = prior.network
    xi, logistic = [], {}
    for l in range(net.n_layers):
        xi.append(rng.standard_normal((S,) + params.arrays[f"mu{l}"].shape))
        if f"logit{l}" in params.arrays:
            logistic[l] = _logistic_noise(rng, (S, net.widths[l]))
    return ElboNoise(xi, logistic)


def _layer_rows(prior, l, leaves, tau_soft, S):
    """Per-row multiplier lam * tau, shape (S, fan_in) or (fan_in,)."""
    net = prior.network
    local = prior.local[l]
    if isinstance(local, DeltaScale):
        lam = local.scale
    else:
        lam = dc.exp(leaves[f"loglam{l}"])
    if tau_soft is None:
        return lam * np.ones(net.fan_in(l))
    if net.has_bias:
        tau_soft = dc.concat([tau_soft, tau_soft.tape.const(np.ones((S, 1)))], axis=1)
    return tau_soft * lam


def _weights(prior, leaves, noise: ElboNoise, temperature):
    """Sampled weight nodes (S, fan_in, fan_out) and relaxed indicators per layer."""
    net = prior.network
    S = noise.xi[0].shape[0]
    sigma_eps = dc.exp(leaves["log_sigma_eps"])
    weights, taus = [], {}
    for l in range(net.n_layers):
        beta = leaves[f"mu{l}"] + dc.exp(leaves[f"logstd{l}"]) * noise.xi[l]
        tau_soft = None
        if l in noise.logistic:
            tau_soft = _concrete(leaves[f"logit{l}"], noise.logistic[l], temperature)
            taus[l] = tau_soft
        rows = _layer_rows(prior, l, leaves, tau_soft, S)
        if isinstance(rows, dc.Node):
            rows = dc.reshape(rows, rows.shape + (1,))
        else:
            rows = rows[:, None]
        w = beta * rows
        if l == net.n_layers - 1:
            w = w * sigma_eps
        weights.append(w)
    return weights, taus


def elbo_terms(tape: dc.Tape, leaves: dict, temperature: float, batch, prior: GsmPriorSpec,
               noise: ElboNoise, n_total: int | None = None) -> dict:
    """ELBO components as scalar nodes: ``entropy``, ``loglik``, ``logprior``, ``elbo``."""
    X, y = batch
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    B = y.shape[0]
    if X.shape[0] != B:
        raise ValueError("X and y row counts differ")
    n_total = B if n_total is None else n_total
    net = prior.network
    S = noise.xi[0].shape[0]

    weights, taus = _weights(prior, leaves, noise, temperature)
    f = forward(X, weights, net)  # (S, B)

    log_sig = leaves["log_sigma_eps"]
    sig2 = dc.exp(2.0 * log_sig)
    resid2 = dc.sum_(dc.square(f - y), axis=1)  # (S,)
    ll_per = (-0.5 * B * math.log(2 * math.pi)) - B * log_sig - resid2 / (2.0 * sig2)
    bad = np.flatnonzero(~np.isfinite(ll_per.value))
    if bad.size:
        raise DivergenceError(f"non-finite likelihood at sample {int(bad[0])}", int(bad[0]))
    loglik = dc.mean(ll_per) * (n_total / B)

    entropy = tape.const(0.0)
    logprior = _log_sq_invgamma_logspace(log_sig, *NOISE_PRIOR)
    for l in range(net.n_layers):
        mu, logstd = leaves[f"mu{l}"], leaves[f"logstd{l}"]
        entropy = entropy + gaussian_entropy(logstd)
        # E_q log N(beta; 0, 1), in closed form
        n = mu.value.size
        logprior = logprior - 0.5 * n * math.log(2 * math.pi) \
            - 0.5 * dc.sum_(dc.square(mu) + dc.exp(2.0 * logstd))
        local = prior.local[l]
        if isinstance(local, InvGammaScale):
            logprior = logprior + dc.sum_(
                _log_sq_invgamma_logspace(leaves[f"loglam{l}"], local.shape, local.scale))
        if l in taus:
            t = taus[l]
            logit = leaves[f"logit{l}"]
            # Monte-Carlo entropy of the relaxed indicators
            ent = -(t * dc.log_sigmoid(logit) + (1.0 - t) * dc.log_sigmoid(-logit))
            entropy = entropy + dc.sum_(ent) * (1.0 / S)
            ind = prior.indicators[l]
            if isinstance(ind, BernoulliIndicators):
                lp = t * math.log(ind.p) + (1.0 - t) * math.log1p(-ind.p)
                logprior = logprior + dc.sum_(lp) * (1.0 / S)
            elif isinstance(ind, JointCountIndicators):
                logprior = logprior + dc.mean(joint_prior_relaxed_logprob(t, ind.count))
    elbo = entropy + loglik + logprior
    return {"entropy": entropy, "loglik": loglik, "logprior": logprior, "elbo": elbo}


def _leaves(tape, params: VariationalParams) -> dict:
    return {k: tape.var(params.arrays[k]) for k in params.keys()}


def elbo_estimate(params: VariationalParams, batch, prior: GsmPriorSpec, S: int,
                  rng: np.random.Generator, n_total: int | None = None, noise=None) -> dc.Node:
    """Scalar ELBO node on a fresh tape; parameters are the tape's leading leaves."""
    if noise is None:
        noise = draw_elbo_noise(params, prior, S, rng)
    tape = dc.Tape()
    leaves = _leaves(tape, params)
    return elbo_terms(tape, leaves, params.temperature, batch, prior, noise, n_total)["elbo"]


def elbo_value_and_grad(params: VariationalParams, batch, prior: GsmPriorSpec, S: int,
                        rng: np.random.Generator, n_total: int | None = None, noise=None):
    """Returns ``(elbo, grads)`` with grads a dict keyed like ``params.arrays``."""
    if noise is None:
        noise = draw_elbo_noise(params, prior, S, rng)
    tape = dc.Tape()
    leaves = _leaves(tape, params)
    out = elbo_terms(tape, leaves, params.temperature, batch, prior, noise, n_total)["elbo"]
    g = dc.backward(tape, out)
    return float(out.value), {k: g[node] for k, node in leaves.items()}


# ---------------------------------------------------------------------------
# training and prediction
# ---------------------------------------------------------------------------


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def ascend(self, arrays: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m.get(k, 0.0) * self.b1 + (1 - self.b1) * g
            v = self.v.get(k, 0.0) * self.b2 + (1 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            arrays[k] = arrays[k] + self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(dataset, prior: GsmPriorSpec, config: TrainConfig = TrainConfig(),
          init: VariationalParams | None = None) -> Posterior:
    """Maximize the ELBO by Adam on mini-batches.

    ``dataset`` is an ``(X, y)`` pair or any object with ``X_train``/``y_train``.
    """
    X, y = _train_arrays(dataset)
    N, D = X.shape
    if D != prior.network.widths[0]:
        raise SpecError(f"prior expects {prior.network.widths[0]} inputs, data has {D}")
    rng = np.random.default_rng(config.seed)
    params = init.copy() if init is not None else init_params(prior, rng)
    opt = _Adam(config.learning_rate)
    B = min(config.batch_size, N)
    curve = []
    for epoch in range(config.epochs):
        params.temperature = config.temperature(epoch)
        order = rng.permutation(N)
        values = []
        for start in range(0, N, B):
            idx = order[start:start + B]
            try:
                value, grads = elbo_value_and_grad(params, (X[idx], y[idx]), prior,
                                                   config.samples, rng, n_total=N)
            except DivergenceError as exc:
                raise DivergenceError(str(exc), exc.sample_index, curve) from exc
            if not (math.isfinite(value) and all(np.all(np.isfinite(g)) for g in grads.values())):
                raise DivergenceError(f"ELBO diverged in epoch {epoch}", None, curve)
            opt.ascend(params.arrays, grads)
            values.append(value)
        curve.append(float(np.mean(values)))
    return Posterior(params, curve, prior, config)


def _train_arrays(dataset):
    if hasattr(dataset, "X_train"):
        return np.asarray(dataset.X_train, dtype=np.float64), np.asarray(dataset.y_train, dtype=np.float64)
    X, y = dataset
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64)


def inclusion_probabilities(params: VariationalParams, layer: int = 0) -> np.ndarray:
    key = f"logit{layer}"
    if key not in params.arrays:
        raise KeyError(f"layer {layer} has no indicators")
    return expit(params.arrays[key])


def predict_mean(posterior: Posterior, X, S: int, rng: np.random.Generator) -> np.ndarray:
    """Average network output over S draws of beta; indicators fixed at sigmoid(logit)."""
    if S < 1:
        raise ValueError("S must be >= 1")
    params, prior = posterior.params, posterior.prior
    net = prior.network
    X = np.asarray(X, dtype=np.float64)
    sigma_eps = params.sigma_eps
    weights = []
    for l in range(net.n_layers):
        mu = params.arrays[f"mu{l}"]
        beta = mu + params.std(l) * rng.standard_normal((S,) + mu.shape)
        local = prior.local[l]
        lam = local.scale if isinstance(local, DeltaScale) else np.exp(params.arrays[f"loglam{l}"])
        rows = lam * np.ones(net.fan_in(l))
        if f"logit{l}" in params.arrays:
            tau = inclusion_probabilities(params, l)
            if net.has_bias:
                tau = np.append(tau, 1.0)
            rows = rows * tau
        w = beta * rows[:, None]
        if l == net.n_layers - 1:
            w = w * sigma_eps
        weights.append(w)
    return forward(X, weights, net).mean(axis=0)
