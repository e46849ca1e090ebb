"""Tune a prior's scale so the implied PVE matches a Beta belief.

A user who expects the covariates to explain little of the variance
states that as Beta(1, 5) on PVE. We start from an Inv-Gamma scale prior
whose PVE piles up near 1 and let the matcher pull it down.
"""

import numpy as np

from infoprior.matcher import BetaTarget, MatchConfig, kl_estimate, optimize_pve
from infoprior.priors import GsmPriorSpec, InvGammaScale, NetworkSpec
from infoprior.pve import pve_prior_samples

X = np.random.default_rng(0).standard_normal((100, 100))
spec = GsmPriorSpec.build(NetworkSpec((100, 50, 30, 1)), InvGammaScale(2.0, 1.0))
target = BetaTarget(1, 5)

before = pve_prior_samples(spec, X, 200, np.random.default_rng(1)).samples
theta, trace = optimize_pve(spec, spec.theta, X, target, MatchConfig(), np.random.default_rng(2))
after = pve_prior_samples(spec.with_theta(theta), X, 200, np.random.default_rng(3)).samples

print(f"target mean PVE      {target.mean:.3f}")
print(f"before: mean {before.mean():.3f}  KL {kl_estimate(before, target):.2f}")
print(f"after:  mean {after.mean():.3f}  KL {kl_estimate(after, target):.2f}")
print(f"scale hyperparameter {spec.theta:.3g} -> {theta:.3g}")
