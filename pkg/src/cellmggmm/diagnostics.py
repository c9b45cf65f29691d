"""Post-fit diagnostics: standardized cell residuals, class assignment, alpha sweeps."""

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from .estimator import fit
from .gaussian import cholesky, group_patterns, symmetrize

VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class ResidualMatrix:
    residuals: tuple  # per group (n_g, p)
    flags: tuple  # per group (n_g, p), True where the cell is flagged


def _component_residuals(X, W, mu, sigma):
    """Standardized residual of every cell under one Gaussian component.

    An observed cell is predicted from the row's other observed cells, a
    flagged cell from all observed cells of the row.
    """
    n, p = X.shape
    R = np.empty((n, p))
    n_floored = 0
    sigma = symmetrize(sigma)
    for pattern, rows in group_patterns(W):
        obs = np.flatnonzero(pattern)
        mis = np.flatnonzero(~pattern)
        Xr = X[rows]
        if obs.size:
            L = cholesky(sigma[np.ix_(obs, obs)], pattern)
            prec = linalg.cho_solve((L, True), np.eye(obs.size))
            # leave-one-out within the observed block via the precision matrix
            scaled = (Xr[:, obs] - mu[obs]) @ prec
            var = 1.0 / np.diag(prec)
            n_floored += int(np.sum(var < VAR_FLOOR))
            R[np.ix_(rows, obs)] = scaled * var / np.sqrt(np.maximum(var, VAR_FLOOR))
        if mis.size:
            if obs.size:
                s_mo = sigma[np.ix_(mis, obs)]
                pred = mu[mis] + (s_mo @ linalg.cho_solve((L, True), (Xr[:, obs] - mu[obs]).T)).T
                var = np.diag(sigma[np.ix_(mis, mis)]) - np.sum(s_mo * linalg.cho_solve((L, True), s_mo.T).T, axis=1)
            else:
                pred = np.broadcast_to(mu[mis], (rows.size, mis.size))
                var = np.diag(sigma)[mis]
            n_floored += int(np.sum(var < VAR_FLOOR))
            R[np.ix_(rows, mis)] = (Xr[:, mis] - pred) / np.sqrt(np.maximum(var, VAR_FLOOR))
    return R, n_floored


def residuals(data, fit_result):
    """Responsibility-weighted standardized cell residuals on the data scale."""
    params = fit_result.params
    out, floored = [], 0
    for X, W, T in zip(data.groups, fit_result.mask.masks, fit_result.resp.t):
        R = np.zeros(X.shape)
        for k in range(params.N):
            Rk, nf = _component_residuals(X, W, params.mu[k], params.sigma_reg[k])
            R += T[:, k:k + 1] * Rk
            floored += nf
        out.append(R)
    if floored:
        warnings.warn(f"{floored} conditional variances floored at {VAR_FLOOR}")
    return ResidualMatrix(tuple(out), tuple(~W for W in fit_result.mask.masks))


def classify(fit_result):
    """Most probable component per observation.

    Returns a list over groups of ``(assigned, probabilities)``; ties favour
    the observation's own group, then the smallest index.
    """
    out = []
    for g, T in enumerate(fit_result.resp.t):
        best = T.max(axis=1, keepdims=True)
        tied = T == best
        assigned = np.where(tied[:, g], g, np.argmax(tied, axis=1))
        out.append((assigned, np.array(T)))
    return out


def alpha_sweep(data, cfg, alphas):
    """Independent fits for each alpha, in the order given."""
    return [(float(a), fit(data, replace(cfg, alpha=float(a)))) for a in alphas]


def residual_spread(sweep, data):
    """Per-cell standard deviation of residuals across the fits of a sweep."""
    stacks = [residuals(data, res).residuals for _, res in sweep]
    return tuple(np.std(np.stack([s[g] for s in stacks]), axis=0) for g in range(data.N))
