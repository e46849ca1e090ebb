"""Gaussian scale mixture priors for network weights.

Every weight is written in non-centered form ``w = sigma * beta * lam * tau``
with ``beta ~ N(0, 1)``. The local scale ``lam`` and the indicator ``tau``
are shared by all outgoing weights of a node (ARD). Indicators may be
independent Bernoullis or drawn jointly through a prior on their sum, the
number of relevant features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
from scipy import special

from . import diffcore as dc

__all__ = [
    "SpecError",
    "DiscretizedLaplace",
    "FlattenedLaplace",
    "UniformCount",
    "BinomialCount",
    "CountPrior",
    "DeltaScale",
    "InvGammaScale",
    "LocalScalePrior",
    "NoIndicators",
    "BernoulliIndicators",
    "JointCountIndicators",
    "IndicatorPrior",
    "NetworkSpec",
    "GsmPriorSpec",
    "LayerDraw",
    "WeightDraw",
    "count_pmf",
    "log_binom",
    "joint_indicator_log_prob",
    "sample_indicators",
    "sample_local_scales",
    "sample_weight_draw",
    "spec_to_config",
    "spec_from_config",
]


class SpecError(ValueError):
    """Invalid prior or network specification."""


def log_binom(n, k):
    return special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)


# ---------------------------------------------------------------------------
# priors on the number of relevant features
# ---------------------------------------------------------------------------


class _CountBase:
    D: int

    def _check_D(self):
        if int(self.D) != self.D or self.D < 0:
            raise SpecError(f"D must be a nonnegative integer, got {self.D}")

    def unnormalized(self, m: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_pmf(self) -> np.ndarray:
        """Normalized log pmf over {0, ..., D}; the normalizer is summed explicitly."""
        lp = self.unnormalized(np.arange(self.D + 1, dtype=np.float64))
        return lp - special.logsumexp(lp)

    def pmf(self) -> np.ndarray:
        return np.exp(self.log_pmf())

    def log_normalizer(self) -> float:
        return float(special.logsumexp(self.unnormalized(np.arange(self.D + 1, dtype=np.float64))))

    def relaxed_log_pmf(self, s: dc.Node) -> dc.Node:
        """log pmf evaluated at a real-valued count node ``s`` (exact at integers)."""
        raise NotImplementedError

    def mean(self) -> float:
        return float(np.dot(np.arange(self.D + 1), self.pmf()))


@dataclass(frozen=True)
class DiscretizedLaplace(_CountBase):
    """p(m) proportional to exp(-precision * |m - mode| / 2)."""

    D: int
    mode: int
    precision: float

    def __post_init__(self):
        self._check_D()
        if not 0 <= self.mode <= self.D:
            raise SpecError("mode must lie in [0, D]")
        if self.precision < 0:
            raise SpecError("precision must be >= 0")

    def unnormalized(self, m):
        return -self.precision * np.abs(m - self.mode) / 2.0

    def relaxed_log_pmf(self, s):
        dist = dc.op_relu(s - self.mode) + dc.op_relu(self.mode - s)
        return dist * (-self.precision / 2.0) - self.log_normalizer()


@dataclass(frozen=True)
class FlattenedLaplace(_CountBase):
    """Uniform on [lower, upper], exponential decay of rate precision/2 outside."""

    D: int
    lower: int
    upper: int
    precision: float

    def __post_init__(self):
        self._check_D()
        if not 0 <= self.lower <= self.upper <= self.D:
            raise SpecError("need 0 <= lower <= upper <= D")
        if self.precision < 0:
            raise SpecError("precision must be >= 0")

    def unnormalized(self, m):
        excess = np.maximum(np.maximum(m - self.upper, self.lower - m), 0.0)
        return -self.precision * excess / 2.0

    def relaxed_log_pmf(self, s):
        # lower <= upper, so at most one of the two hinges is active.
        excess = dc.op_relu(s - self.upper) + dc.op_relu(self.lower - s)
        return excess * (-self.precision / 2.0) - self.log_normalizer()


@dataclass(frozen=True)
class UniformCount(_CountBase):
    D: int

    def __post_init__(self):
        self._check_D()

    def unnormalized(self, m):
        return np.zeros_like(m)

    def relaxed_log_pmf(self, s):
        return s * 0.0 - math.log(self.D + 1)


@dataclass(frozen=True)
class BinomialCount(_CountBase):
    D: int
    p: float

    def __post_init__(self):
        self._check_D()
        if not 0.0 <= self.p <= 1.0:
            raise SpecError("p must lie in [0, 1]")

    def unnormalized(self, m):
        return log_binom(self.D, m) + special.xlogy(m, self.p) + special.xlog1py(self.D - m, -self.p)

    def relaxed_log_pmf(self, s):
        if not 0.0 < self.p < 1.0:
            raise SpecError("relaxed binomial needs 0 < p < 1")
        lb = (math.lgamma(self.D + 1) - dc.op_lgamma(s + 1.0) - dc.op_lgamma(self.D + 1.0 - s))
        return lb + s * math.log(self.p) + (self.D - s) * math.log1p(-self.p) - self.log_normalizer()


CountPrior = Union[DiscretizedLaplace, FlattenedLaplace, UniformCount, BinomialCount]


def count_pmf(prior: CountPrior) -> np.ndarray:
    """Probability vector of length D + 1."""
    return prior.pmf()


def joint_indicator_log_prob(tau, prior: CountPrior):
    """log p(tau) under the joint prior: log p_m(sum tau) - log C(D, sum tau).

    ``tau`` is a binary vector of length D, or a batch (..., D) of them.
    """
    tau = np.asarray(tau)
    if tau.ndim == 0 or tau.shape[-1] != prior.D:
        raise SpecError(f"tau must have length D={prior.D}")
    if tau.ndim == 1:
        s = int(tau.sum())
        lc = math.lgamma(prior.D + 1) - math.lgamma(s + 1) - math.lgamma(prior.D - s + 1)
        return float(prior.log_pmf()[s]) - lc
    s = np.rint(tau.sum(axis=-1)).astype(np.int64)
    return prior.log_pmf()[s] - log_binom(prior.D, s)


def sample_indicators(prior: CountPrior, rng: np.random.Generator) -> np.ndarray:
    """Draw m from the count prior, then switch on a uniformly random m-subset."""
    m = rng.choice(prior.D + 1, p=prior.pmf())
    tau = np.zeros(prior.D)
    tau[rng.choice(prior.D, size=m, replace=False)] = 1.0
    return tau


# ---------------------------------------------------------------------------
# local scales
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeltaScale:
    """lam fixed at ``scale`` (the mean-field Gaussian prior)."""

    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise SpecError("delta scale must be positive")

    @property
    def theta(self) -> float:
        return self.scale

    def with_theta(self, theta: float) -> "DeltaScale":
        return DeltaScale(float(theta))

    def log_density(self, lam):
        raise SpecError("a delta local scale has no density")


@dataclass(frozen=True)
class InvGammaScale:
    """lam**2 ~ Inv-Gamma(shape, scale); only ``scale`` is optimizable."""

    shape: float = 2.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise SpecError("inverse-gamma scale must be positive")
        if not self.shape > 0:
            raise SpecError("inverse-gamma shape must be positive")

    @property
    def theta(self) -> float:
        return self.scale

    def with_theta(self, theta: float) -> "InvGammaScale":
        return InvGammaScale(self.shape, float(theta))

    def require_finite_mean(self):
        if not self.shape > 1:
            raise SpecError("PVE sampling needs shape > 1 (finite second moment)")

    def log_density(self, lam):
        """Density of lam itself (includes the Jacobian of lam -> lam**2)."""
        a, b = self.shape, self.scale
        v = lam * lam
        return a * np.log(b) - special.gammaln(a) - (a + 1) * np.log(v) - b / v + np.log(2 * lam)


LocalScalePrior = Union[DeltaScale, InvGammaScale]


@dataclass
class ScaleDraw:
    """Local scales plus the Gamma draws that make them differentiable in theta."""

    lam: np.ndarray
    g: np.ndarray | None


def sample_local_scales(prior: LocalScalePrior, n: int, rng: np.random.Generator) -> ScaleDraw:
    """Reparametrized draw: Delta -> constant; InvGamma -> sqrt(scale / g), g ~ Gamma(shape, 1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(prior, DeltaScale):
        return ScaleDraw(np.full(n, prior.scale), None)
    if isinstance(prior, InvGammaScale):
        g = rng.gamma(prior.shape, 1.0, size=n)
        return ScaleDraw(np.sqrt(prior.scale / g), g)
    raise SpecError(f"unknown local scale prior {prior!r}")


# ---------------------------------------------------------------------------
# indicators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoIndicators:
    def sample(self, D, rng):
        return np.ones(D)


@dataclass(frozen=True)
class BernoulliIndicators:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise SpecError("p must lie in [0, 1]")

    def sample(self, D, rng):
        return (rng.random(D) < self.p).astype(np.float64)


@dataclass(frozen=True)
class JointCountIndicators:
    count: CountPrior

    def sample(self, D, rng):
        if D != self.count.D:
            raise SpecError(f"count prior has D={self.count.D} but layer has {D} inputs")
        return sample_indicators(self.count, rng)


IndicatorPrior = Union[NoIndicators, BernoulliIndicators, JointCountIndicators]


# ---------------------------------------------------------------------------
# network and full prior
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkSpec:
    """ReLU regression network. ``widths`` runs from input D to output 1.

    With ``bias="scaled"`` each layer gets an extra constant input node whose
    value is the product of all earlier global scales, which keeps the
    network positively homogeneous in the per-layer scales.
    """

    widths: tuple
    bias: str = "none"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise SpecError("network needs at least one weight layer")
        if widths[-1] != 1:
            raise SpecError("regression networks have output width 1")
        if any(w < 1 for w in widths):
            raise SpecError("widths must be positive")
        if self.bias not in ("none", "scaled"):
            raise SpecError(f"unknown bias policy {self.bias!r}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def has_bias(self) -> bool:
        return self.bias == "scaled"

    def fan_in(self, layer: int) -> int:
        """Rows of the weight matrix, counting the bias node."""
        return self.widths[layer] + int(self.has_bias)


@dataclass(frozen=True)
class GsmPriorSpec:
    network: NetworkSpec
    local: tuple
    indicators: tuple
    global_scales: tuple = field(default=())

    def __post_init__(self):
        L = self.network.n_layers
        if not self.global_scales:
            object.__setattr__(self, "global_scales", (1.0,) * L)
        if not (len(self.local) == len(self.indicators) == len(self.global_scales) == L):
            raise SpecError("per-layer prior lists must match the number of layers")
        for lp in self.local:
            if not isinstance(lp, (DeltaScale, InvGammaScale)):
                raise SpecError(f"unsupported local scale prior {lp!r}")
        for l, ip in enumerate(self.indicators):
            if not isinstance(ip, (NoIndicators, BernoulliIndicators, JointCountIndicators)):
                raise SpecError(f"unsupported indicator prior {ip!r}")
            if isinstance(ip, JointCountIndicators) and ip.count.D != self.network.widths[l]:
                raise SpecError(f"layer {l}: count prior D must equal the layer input width")
        if any(not s > 0 for s in self.global_scales):
            raise SpecError("global scales must be positive")

    @classmethod
    def build(cls, network: NetworkSpec, local: LocalScalePrior, input_indicator=None,
              hidden_indicator=None, global_scales=None) -> "GsmPriorSpec":
        """Same local prior on every layer; indicators on the input layer only by default."""
        L = network.n_layers
        ind = [input_indicator or NoIndicators()]
        ind += [hidden_indicator or NoIndicators()] * (L - 1)
        gs = tuple(global_scales) if global_scales is not None else (1.0,) * L
        return cls(network, (local,) * L, tuple(ind), gs)

    @property
    def theta(self) -> float:
        """The shared local-scale hyperparameter (sigma_lambda or the inverse-gamma scale)."""
        thetas = {lp.theta for lp in self.local}
        kinds = {type(lp) for lp in self.local}
        if len(kinds) != 1 or len(thetas) != 1:
            raise SpecError("layers do not share a single local-scale hyperparameter")
        return thetas.pop()

    def with_theta(self, theta: float) -> "GsmPriorSpec":
        return replace(self, local=tuple(lp.with_theta(theta) for lp in self.local))

    def has_unit_scales(self) -> bool:
        return all(s == 1.0 for s in self.global_scales[:-1])


@dataclass
class LayerDraw:
    beta: np.ndarray
    lam: np.ndarray
    tau: np.ndarray
    sigma: float
    g: np.ndarray | None = None

    @property
    def w(self) -> np.ndarray:
        return self.sigma * self.beta * (self.lam * self.tau)[:, None]


@dataclass
class WeightDraw:
    layers: list

    @property
    def weights(self) -> list:
        return [layer.w for layer in self.layers]


def _layer_indicators(spec: GsmPriorSpec, l: int, rng) -> np.ndarray:
    D = spec.network.widths[l]
    tau = spec.indicators[l].sample(D, rng)
    if spec.network.has_bias:
        tau = np.append(tau, 1.0)
    return tau


def sample_weight_draw(spec: GsmPriorSpec, rng: np.random.Generator) -> WeightDraw:
    net = spec.network
    layers = []
    for l in range(net.n_layers):
        fan_in, fan_out = net.fan_in(l), net.widths[l + 1]
        beta = rng.standard_normal((fan_in, fan_out))
        scales = sample_local_scales(spec.local[l], fan_in, rng)
        tau = _layer_indicators(spec, l, rng)
        layers.append(LayerDraw(beta, scales.lam, tau, float(spec.global_scales[l]), scales.g))
    return WeightDraw(layers)


# ---------------------------------------------------------------------------
# flat config serialization
# ---------------------------------------------------------------------------

_COUNT_KINDS = ("flattened_laplace", "discretized_laplace", "uniform", "binomial")


def _count_from_config(cfg: dict, D: int) -> CountPrior:
    kind = cfg.get("prior.count", "flattened_laplace")
    if kind == "flattened_laplace":
        return FlattenedLaplace(D, int(cfg.get("prior.count_lower", 0)),
                                int(cfg.get("prior.count_upper", D)),
                                float(cfg.get("prior.count_precision", 1.0)))
    if kind == "discretized_laplace":
        return DiscretizedLaplace(D, int(cfg["prior.count_mode"]),
                                  float(cfg.get("prior.count_precision", 1.0)))
    if kind == "uniform":
        return UniformCount(D)
    if kind == "binomial":
        return BinomialCount(D, float(cfg["prior.count_p"]))
    raise SpecError(f"unknown count prior {kind!r}; expected one of {_COUNT_KINDS}")


def _indicator_from_config(kind: str, cfg: dict, D: int, p_key: str) -> IndicatorPrior:
    if kind == "none":
        return NoIndicators()
    if kind == "bernoulli":
        return BernoulliIndicators(float(cfg[p_key]))
    if kind == "joint":
        return JointCountIndicators(_count_from_config(cfg, D))
    raise SpecError(f"unknown indicator prior {kind!r}")


def spec_from_config(cfg: dict) -> GsmPriorSpec:
    """Build a prior from flat ``prior.*`` keys (string values are accepted)."""
    try:
        widths = tuple(int(w) for w in str(cfg["prior.widths"]).split(","))
    except KeyError as exc:
        raise SpecError("missing key prior.widths") from exc
    net = NetworkSpec(widths, cfg.get("prior.bias", "none"))
    kind = cfg.get("prior.local", "delta")
    if kind == "delta":
        local = DeltaScale(float(cfg.get("prior.local_scale", 1.0)))
    elif kind == "invgamma":
        local = InvGammaScale(float(cfg.get("prior.alpha", 2.0)), float(cfg.get("prior.beta", 1.0)))
    else:
        raise SpecError(f"unknown local scale prior {kind!r}")
    inp = _indicator_from_config(cfg.get("prior.input_indicator", "none"), cfg, widths[0],
                                 "prior.indicator_p")
    hid = _indicator_from_config(cfg.get("prior.hidden_indicator", "none"), cfg, 0,
                                 "prior.hidden_indicator_p")
    if isinstance(hid, JointCountIndicators):
        raise SpecError("joint count indicators are only supported on the input layer")
    gs = cfg.get("prior.global_scales")
    global_scales = None
    if gs is not None:
        vals = [float(v) for v in str(gs).split(",")]
        global_scales = vals * net.n_layers if len(vals) == 1 else vals
    return GsmPriorSpec.build(net, local, inp, hid, global_scales)


def spec_to_config(spec: GsmPriorSpec) -> dict:
    """Inverse of :func:`spec_from_config` for specs built with :meth:`GsmPriorSpec.build`."""
    cfg = {
        "prior.widths": ",".join(str(w) for w in spec.network.widths),
        "prior.bias": spec.network.bias,
        "prior.global_scales": ",".join(repr(float(s)) for s in spec.global_scales),
    }
    local = spec.local[0]
    if isinstance(local, DeltaScale):
        cfg["prior.local"] = "delta"
        cfg["prior.local_scale"] = repr(local.scale)
    else:
        cfg["prior.local"] = "invgamma"
        cfg["prior.alpha"] = repr(local.shape)
        cfg["prior.beta"] = repr(local.scale)

    def put_indicator(ip, key, p_key):
        if isinstance(ip, NoIndicators):
            cfg[key] = "none"
        elif isinstance(ip, BernoulliIndicators):
            cfg[key] = "bernoulli"
            cfg[p_key] = repr(ip.p)
        else:
            cfg[key] = "joint"
            c = ip.count
            if isinstance(c, FlattenedLaplace):
                cfg.update({"prior.count": "flattened_laplace", "prior.count_lower": str(c.lower),
                            "prior.count_upper": str(c.upper),
                            "prior.count_precision": repr(c.precision)})
            elif isinstance(c, DiscretizedLaplace):
                cfg.update({"prior.count": "discretized_laplace", "prior.count_mode": str(c.mode),
                            "prior.count_precision": repr(c.precision)})
            elif isinstance(c, UniformCount):
                cfg["prior.count"] = "uniform"
            else:
                cfg.update({"prior.count": "binomial", "prior.count_p": repr(c.p)})

    put_indicator(spec.indicators[0], "prior.input_indicator", "prior.indicator_p")
    hidden = spec.indicators[1] if len(spec.indicators) > 1 else NoIndicators()
    put_indicator(hidden, "prior.hidden_indicator", "prior.hidden_indicator_p")
    return cfg
