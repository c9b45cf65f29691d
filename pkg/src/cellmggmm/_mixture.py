"""Stacked-array mixture helpers shared by the estimator and the initializer."""

import numpy as np
from scipy.special import logsumexp

from .gaussian import batch_log_density


def log_weights(pi, gid):
    """Row-wise log mixture weights; zero weights map to ``-inf`` and drop out."""
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(pi))[gid]


def component_log_density(X, W, mu, sigma_reg):
    """(n, N) matrix of observed-pattern log densities under each component."""
    return np.column_stack([batch_log_density(X, W, mu[k], sigma_reg[k]) for k in range(len(mu))])


def log_mixture(logw, logphi):
    """Per-row ``log sum_k pi_k phi_k`` skipping zero-weight components."""
    terms = np.where(np.isneginf(logw), -np.inf, logw + logphi)
    return logsumexp(terms, axis=1)


def responsibilities(logw, logphi):
    terms = np.where(np.isneginf(logw), -np.inf, logw + logphi)
    T = np.exp(terms - logsumexp(terms, axis=1, keepdims=True))
    return T / T.sum(axis=1, keepdims=True)
