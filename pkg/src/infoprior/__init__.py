"""Informative Gaussian scale mixture priors for Bayesian regression networks.

Priors on the number of relevant features and on the proportion of variance
explained, with variational and exact reference inference.
"""

__version__ = "0.1.0"
