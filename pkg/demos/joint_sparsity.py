"""How a joint count prior treats false features differently from Bernoulli.

Twelve features, four with strong signal. The count prior puts a flat
plateau on 0..4 active features, the Bernoulli prior has the same
expected count. Exact enumeration gives the posterior inclusion
probabilities under both.
"""

import numpy as np

from infoprior.oracle import LinearSsModel, exact_enumerate
from infoprior.priors import BinomialCount, FlattenedLaplace

rng = np.random.default_rng(3)
D, k = 12, 4
y = np.concatenate([np.full(k, 6.0), 1.5 * rng.standard_normal(D - k)])

joint = exact_enumerate(LinearSsModel(y, 1.0, 3.0, FlattenedLaplace(D, 0, k, 5.0)))
indep = exact_enumerate(LinearSsModel(y, 1.0, 3.0, BinomialCount(D, k / D)))

print(" j      y   joint  bernoulli")
for j in range(D):
    print(f"{j:2d} {y[j]:6.2f}  {joint.inclusion[j]:.3f}  {indep.inclusion[j]:.3f}")
print(f"expected false positives: joint {joint.inclusion[k:].sum():.3f}, "
      f"bernoulli {indep.inclusion[k:].sum():.3f}")
