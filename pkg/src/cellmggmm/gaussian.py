"""Masked multivariate Gaussian primitives.

A pattern ``w`` is a boolean vector over the ``p`` variables; ``True`` marks an
observed cell. All log-determinants and quadratic forms go through a Cholesky
factor of the observed submatrix.
"""

import numpy as np
from scipy import linalg

LOG_2PI = float(np.log(2.0 * np.pi))


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky factorization of an observed covariance block failed."""

    def __init__(self, pattern, context=""):
        self.pattern = np.asarray(pattern, dtype=bool).copy()
        self.context = context
        bits = "".join("1" if b else "0" for b in self.pattern)
        msg = f"covariance submatrix for pattern {bits} is not positive definite"
        if context:
            msg = f"{msg} ({context})"
        super().__init__(msg)


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _as_pattern(w, p):
    w = np.asarray(w).astype(bool).ravel()
    if w.shape[0] != p:
        raise ValueError(f"pattern has length {w.shape[0]}, expected {p}")
    return w


def cholesky(sub, pattern=None):
    """Lower Cholesky factor of ``sub``; raises :class:`FactorizationError`."""
    try:
        return linalg.cholesky(sub, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise FactorizationError(pattern if pattern is not None else np.ones(len(sub), bool))


def observed_log_density(x, mu, sigma, w):
    """Log density of the observed coordinates of ``x``.

    Returns exactly 0 for an all-missing pattern (density 1 by convention).
    """
    x = np.asarray(x, dtype=float).ravel()
    mu = np.asarray(mu, dtype=float).ravel()
    w = _as_pattern(w, x.shape[0])
    obs = np.flatnonzero(w)
    if obs.size == 0:
        return 0.0
    sub = symmetrize(np.asarray(sigma, dtype=float)[np.ix_(obs, obs)])
    L = cholesky(sub, w)
    z = linalg.solve_triangular(L, x[obs] - mu[obs], lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * (obs.size * LOG_2PI + logdet + z @ z))


def conditional_moments(x, mu, sigma, w):
    """Conditional mean and covariance of the missing cells given the observed.

    Returns
    -------
    imputed : ndarray of shape (p,)
        ``x`` on observed coordinates, the conditional expectation elsewhere.
    cond_cov : ndarray of shape (p, p)
        Schur complement in the missing-by-missing block, zero elsewhere.
    """
    x = np.asarray(x, dtype=float).ravel()
    mu = np.asarray(mu, dtype=float).ravel()
    sigma = symmetrize(sigma)
    p = x.shape[0]
    w = _as_pattern(w, p)
    obs = np.flatnonzero(w)
    mis = np.flatnonzero(~w)
    imputed = x.copy()
    cond_cov = np.zeros((p, p))
    if mis.size == 0:
        return imputed, cond_cov
    if obs.size == 0:
        return mu.copy(), sigma.copy()
    L = cholesky(sigma[np.ix_(obs, obs)], w)
    s_mo = sigma[np.ix_(mis, obs)]
    imputed[mis] = mu[mis] + s_mo @ linalg.cho_solve((L, True), x[obs] - mu[obs], check_finite=False)
    schur = sigma[np.ix_(mis, mis)] - s_mo @ linalg.cho_solve((L, True), s_mo.T, check_finite=False)
    cond_cov[np.ix_(mis, mis)] = symmetrize(schur)
    return imputed, cond_cov


def condition_number(sigma):
    """Ratio of extreme eigenvalues; ``inf`` when the smallest is not positive."""
    ev = np.linalg.eigvalsh(symmetrize(sigma))
    if ev[0] <= 0:
        return float("inf")
    return float(ev[-1] / ev[0])


# Batched versions over many rows. Rows sharing a pattern share one factorization.

def group_patterns(W):
    """Split row indices by missingness pattern.

    Yields ``(pattern, rows)`` in lexicographic pattern order.
    """
    W = np.asarray(W, dtype=bool)
    if W.shape[0] == 0:
        return
    patterns, inverse = np.unique(W, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(patterns) + 1))
    for u, pattern in enumerate(patterns):
        yield pattern, order[bounds[u]:bounds[u + 1]]


def batch_log_density(X, W, mu, sigma):
    """``observed_log_density`` for every row of ``X`` under its row of ``W``."""
    X = np.asarray(X, dtype=float)
    out = np.zeros(X.shape[0])
    for pattern, rows in group_patterns(W):
        obs = np.flatnonzero(pattern)
        if obs.size == 0:
            continue
        L = cholesky(symmetrize(sigma[np.ix_(obs, obs)]), pattern)
        z = linalg.solve_triangular(L, (X[np.ix_(rows, obs)] - mu[obs]).T, lower=True, check_finite=False)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        out[rows] = -0.5 * (obs.size * LOG_2PI + logdet + np.sum(z * z, axis=0))
    return out


def batch_toggle_log_density(X, W, j, mu, sigma):
    """Log densities with cell ``j`` of each row included and excluded.

    The rest of each row's pattern is taken from ``W``. Variable ``j`` is put
    last in the factorization so the excluded case falls out of the leading
    block of the same Cholesky factor.
    """
    X = np.asarray(X, dtype=float)
    W = np.array(W, dtype=bool)
    W[:, j] = True
    incl = np.zeros(X.shape[0])
    excl = np.zeros(X.shape[0])
    for pattern, rows in group_patterns(W):
        others = np.flatnonzero(pattern)
        idx = np.append(others[others != j], j)
        L = cholesky(symmetrize(sigma[np.ix_(idx, idx)]), pattern)
        z = linalg.solve_triangular(L, (X[np.ix_(rows, idx)] - mu[idx]).T, lower=True, check_finite=False)
        logd = np.log(np.diag(L))
        quad = np.sum(z * z, axis=0)
        incl[rows] = -0.5 * (idx.size * LOG_2PI + 2.0 * logd.sum() + quad)
        excl[rows] = incl[rows] + 0.5 * (LOG_2PI + 2.0 * logd[-1] + z[-1] ** 2)
    return incl, excl


def batch_conditional_moments(X, W, mu, sigma):
    """Imputed rows and per-pattern conditional covariances.

    Returns ``(imputed, blocks)`` where ``blocks`` is a list of
    ``(rows, missing_idx, schur)`` for every pattern with missing cells.
    """
    X = np.asarray(X, dtype=float)
    sigma = symmetrize(sigma)
    imputed = X.copy()
    blocks = []
    for pattern, rows in group_patterns(W):
        obs = np.flatnonzero(pattern)
        mis = np.flatnonzero(~pattern)
        if mis.size == 0:
            continue
        if obs.size == 0:
            imputed[rows] = mu
            blocks.append((rows, mis, sigma.copy()))
            continue
        L = cholesky(sigma[np.ix_(obs, obs)], pattern)
        s_mo = sigma[np.ix_(mis, obs)]
        coef = linalg.cho_solve((L, True), (X[np.ix_(rows, obs)] - mu[obs]).T, check_finite=False)
        imputed[np.ix_(rows, mis)] = mu[mis] + (s_mo @ coef).T
        schur = sigma[np.ix_(mis, mis)] - s_mo @ linalg.cho_solve((L, True), s_mo.T, check_finite=False)
        blocks.append((rows, mis, symmetrize(schur)))
    return imputed, blocks
