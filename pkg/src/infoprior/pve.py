"""Proportion of variance explained, for fitted models and for prior draws.

With unit global scales on all but the output layer and the output scale
tied to the noise scale, the prior PVE of a ReLU network reduces to
``V / (V + 1)`` where ``V`` is the empirical variance of the network output
over the inputs ``X``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .priors import (
    DeltaScale,
    GsmPriorSpec,
    InvGammaScale,
    NetworkSpec,
    SpecError,
    WeightDraw,
    _layer_indicators,
)

__all__ = [
    "DegenerateTargetError",
    "pve_of_fit",
    "forward",
    "model_output_variance",
    "PveSampleSet",
    "PriorNoise",
    "draw_prior_noise",
    "pve_graph",
    "pve_prior_samples",
    "homogeneity_check",
]


class DegenerateTargetError(ValueError):
    pass


def pve_of_fit(y, yhat) -> float:
    """1 - SS_res / SS_tot. Can be negative on held-out data."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.size < 2:
        raise ValueError("y and yhat must have equal length >= 2")
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot <= 0:
        raise DegenerateTargetError("target is constant")
    return float(1.0 - np.sum((y - yhat) ** 2) / ss_tot)


def forward(X, weights, net: NetworkSpec, global_scales=None):
    """ReLU network output, shape ``(..., N)``.

    ``X`` and each weight may be arrays or tape nodes. Weights may carry a
    leading batch axis ``(M, fan_in, fan_out)``; the output then has shape
    ``(M, N)``. ``global_scales`` only matters for the bias inputs.
    """
    L = net.n_layers
    scales = global_scales if global_scales is not None else (1.0,) * L
    h = X
    bias_in = 1.0
    for l, w in enumerate(weights):
        if net.has_bias:
            d = net.widths[l]
            z = h @ w[..., :d, :] + w[..., d:, :] * bias_in
        else:
            z = h @ w
        bias_in *= scales[l]
        if l < L - 1:
            h = dc.op_relu(z) if isinstance(z, dc.Node) else np.maximum(z, 0.0)
        else:
            h = z
    if isinstance(h, dc.Node):
        return dc.reshape(h, h.shape[:-1])
    return h[..., 0]


def model_output_variance(net: NetworkSpec, draw: WeightDraw, X, tape: dc.Tape | None = None):
    """Empirical variance of f(x; w) over the rows of X, as a tape node.

    The materialized weights become leaves on ``tape`` (a fresh one when not
    given), so the result can be differentiated with respect to them.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("X needs at least 2 rows")
    tape = tape or dc.Tape()
    ws = [tape.var(w) for w in draw.weights]
    scales = [layer.sigma for layer in draw.layers]
    return dc.op_variance(forward(X, ws, net, scales))


@dataclass
class PriorNoise:
    """Reparametrization record for M prior draws: everything except theta.

    Per layer: ``beta`` (M, fan_in, fan_out), ``g`` (M, fan_in) Gamma draws
    or None for delta scales, ``tau`` (M, fan_in) indicators.
    """

    beta: list
    g: list
    tau: list

    @property
    def M(self) -> int:
        return self.beta[0].shape[0]


def draw_prior_noise(spec: GsmPriorSpec, M: int, rng: np.random.Generator) -> PriorNoise:
    net = spec.network
    betas, gs, taus = [], [], []
    for l in range(net.n_layers):
        fan_in, fan_out = net.fan_in(l), net.widths[l + 1]
        betas.append(rng.standard_normal((M, fan_in, fan_out)))
        local = spec.local[l]
        if isinstance(local, InvGammaScale):
            local.require_finite_mean()
            gs.append(rng.gamma(local.shape, 1.0, size=(M, fan_in)))
        else:
            gs.append(None)
        taus.append(np.stack([_layer_indicators(spec, l, rng) for _ in range(M)]))
    return PriorNoise(betas, gs, taus)


def pve_graph(tape: dc.Tape, spec: GsmPriorSpec, theta: dc.Node, noise: PriorNoise, X):
    """Build rho_m = V_m / (V_m + 1) on ``tape`` as a function of ``theta``.

    ``theta`` is a scalar node, or a length-M node holding one copy per draw
    so that a single backward pass yields every d rho_m / d theta.
    Returns ``(rho, V)`` nodes of shape (M,).
    """
    net = spec.network
    if theta.ndim == 1:
        theta = dc.reshape(theta, (theta.shape[0], 1, 1))
    weights = []
    for l in range(net.n_layers):
        local = spec.local[l]
        if isinstance(local, DeltaScale):
            lt = noise.tau[l][:, :, None] * theta
        elif isinstance(local, InvGammaScale):
            lt = dc.sqrt(theta) * (noise.tau[l] / np.sqrt(noise.g[l]))[:, :, None]
        else:
            raise SpecError(f"unsupported local prior {local!r}")
        weights.append(lt * noise.beta[l])
    out = forward(np.asarray(X, dtype=np.float64), weights, net)
    V = dc.op_variance(out, axis=-1)
    return V / (V + 1.0), V


@dataclass
class PveSampleSet:
    samples: np.ndarray
    noise: PriorNoise
    spec: GsmPriorSpec
    n_rows: int

    def __len__(self) -> int:
        return len(self.samples)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["pve"])
            for v in self.samples:
                writer.writerow([repr(float(v))])


def pve_prior_samples(spec: GsmPriorSpec, X, M: int, rng: np.random.Generator) -> PveSampleSet:
    """M independent prior PVE draws on the inputs X."""
    if M < 2:
        raise ValueError("M must be >= 2")
    if not spec.has_unit_scales():
        raise SpecError("prior PVE simulation assumes unit global scales below the output layer")
    noise = draw_prior_noise(spec, M, rng)
    tape = dc.Tape()
    rho, _ = pve_graph(tape, spec, tape.var(spec.theta), noise, X)
    return PveSampleSet(rho.value.copy(), noise, spec, int(np.shape(X)[0]))


def homogeneity_check(net: NetworkSpec, draw: WeightDraw, X, scales) -> float:
    """Max relative deviation between f(X; c * w) and prod(c) * f(X; w)."""
    scales = [float(c) for c in scales]
    if len(scales) != net.n_layers:
        raise ValueError("need one scale per layer")
    base_sigma = [layer.sigma for layer in draw.layers]
    X = np.asarray(X, dtype=np.float64)
    f0 = forward(X, draw.weights, net, base_sigma)
    scaled_w = [c * w for c, w in zip(scales, draw.weights)]
    scaled_sigma = [c * s for c, s in zip(scales, base_sigma)]
    f1 = forward(X, scaled_w, net, scaled_sigma)
    expected = np.prod(scales) * f0
    if expected.size == 0:
        return 0.0
    floor = max(1e-8 * float(np.abs(expected).max()), np.finfo(float).tiny)
    dev = np.abs(f1 - expected) / np.maximum(np.abs(expected), floor)
    return float(dev.max())
