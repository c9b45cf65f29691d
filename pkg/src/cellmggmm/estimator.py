"""Penalized observed-likelihood fit of the multi-group Gaussian mixture.

The fit alternates a W-step, which re-decides the flagged cells one variable
at a time, with an EM-step that updates the mixture weights, means and
regularized covariances given the current flags.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from . import robust
from ._mixture import component_log_density, log_mixture, log_weights, responsibilities
from .gaussian import (
    FactorizationError,
    batch_conditional_moments,
    batch_toggle_log_density,
    condition_number,
    symmetrize,
)
from .model import CellMask, FitResult, MixtureParams, Responsibilities, validate

MONOTONE_RTOL = 1e-8


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    loglik_part: float
    penalty_part: float


@dataclass(frozen=True)
class IterationState:
    """Snapshot handed to the ``fit`` callback, on the standardized scale."""

    iteration: int
    stage: str  # "init", "w" or "em"
    params: MixtureParams
    mask: CellMask
    objective: ObjectiveValue
    h: tuple
    alpha: float


def objective(data, params, mask, penalty):
    X, gid = data.stacked()
    W = mask.stacked()
    logphi = component_log_density(X, W, params.mu, params.sigma_reg)
    loglik = float(np.sum(-2.0 * log_mixture(log_weights(params.pi, gid), logphi)))
    pen = float(np.sum(penalty.stacked() * ~W))
    return ObjectiveValue(loglik + pen, loglik, pen)


def w_step(data, params, mask_in, cfg, penalty=None):
    """Re-decide the flagged cells, sweeping the variables in order.

    For variable ``j`` each row gets the objective change of keeping the cell
    versus flagging it, with the row's other cells at their current working
    values. A group keeps every cell with a non-positive change if there are
    at least ``h_g`` of them, otherwise the ``h_g`` cells with the smallest
    change (ties to the lower row index).
    """
    penalty = penalty if penalty is not None else cfg.penalty
    if penalty is None:
        raise ValueError("w_step needs a penalty matrix")
    X, gid = data.stacked()
    Q = penalty.stacked()
    W = mask_in.stacked().copy()
    logw = log_weights(params.pi, gid)
    h = cfg.resolve_h(data.sizes)
    starts = np.concatenate(([0], np.cumsum(data.sizes)))
    N = params.N
    for j in range(data.p):
        incl = np.empty((X.shape[0], N))
        excl = np.empty((X.shape[0], N))
        for k in range(N):
            incl[:, k], excl[:, k] = batch_toggle_log_density(X, W, j, params.mu[k], params.sigma_reg[k])
        delta = -2.0 * log_mixture(logw, incl) + 2.0 * log_mixture(logw, excl) - Q[:, j]
        for g in range(data.N):
            sl = slice(starts[g], starts[g + 1])
            d = delta[sl]
            keep = d <= 0
            if keep.sum() < h[g]:
                keep = np.zeros(d.size, dtype=bool)
                keep[np.argsort(d, kind="stable")[:h[g]]] = True
            W[sl, j] = keep
    return CellMask.from_stacked(W, data.sizes)


def e_step(data, params, mask):
    X, gid = data.stacked()
    logphi = component_log_density(X, mask.stacked(), params.mu, params.sigma_reg)
    T = responsibilities(log_weights(params.pi, gid), logphi)
    return Responsibilities.from_stacked(T, data.sizes)


def m_step_pi(resp, alpha):
    """Mixture weights maximizing the expected objective under ``pi[g, g] >= alpha``."""
    N = resp.t[0].shape[1]
    pi = np.zeros((N, N))
    for g, T in enumerate(resp.t):
        tbar = T.mean(axis=0)
        own = tbar[g]
        if own >= 1.0:
            pi[g, g] = 1.0
            continue
        pi[g, g] = max(alpha, own)
        others = np.arange(N) != g
        pi[g, others] = (1.0 - pi[g, g]) * tbar[others] / (1.0 - own)
    return pi


def m_step_moments(data, params_prev, resp, mask):
    """Means and covariances from conditionally imputed rows.

    Returns ``(mu, sigma_reg, sigma)``; ``sigma`` is the unregularized
    weighted covariance including the conditional covariance correction.
    """
    X, _ = data.stacked()
    W = mask.stacked()
    T = resp.stacked()
    N, p = params_prev.N, params_prev.p
    mu = np.empty((N, p))
    sigma = np.empty((N, p, p))
    for k in range(N):
        imputed, blocks = batch_conditional_moments(X, W, params_prev.mu[k], params_prev.sigma_reg[k])
        t = T[:, k]
        tbar = t.sum()
        mu[k] = t @ imputed / tbar
        D = imputed - mu[k]
        S = (D * t[:, None]).T @ D
        for rows, mis, schur in blocks:
            S[np.ix_(mis, mis)] += t[rows].sum() * schur
        sigma[k] = symmetrize(S / tbar)
    sigma_reg = symmetrize(params_prev.reg.apply(sigma))
    return mu, sigma_reg, sigma


def _chol(a):
    try:
        return linalg.cholesky(a, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise FactorizationError(np.ones(len(a), bool), "covariance update")


def expected_cost(sigma_reg, scatter):
    """``log det sigma_reg + tr(sigma_reg^-1 scatter)``, the per-weight EM surrogate."""
    L = _chol(sigma_reg)
    return 2.0 * np.sum(np.log(np.diag(L))) + np.trace(linalg.cho_solve((L, True), scatter))


def _precision(a):
    return symmetrize(linalg.cho_solve((_chol(a), True), np.eye(len(a))))


def _segment_search(old, new, scatter, iters=60):
    """Minimize the surrogate on the precision-space segment from ``old`` to ``new``.

    The surrogate is convex in the precision matrix, so bisection on the sign
    of its directional derivative finds the minimizer.
    """
    P0, P1 = _precision(old), _precision(new)
    D = P1 - P0
    slope_s = np.trace(D @ scatter)

    def slope(a):
        Pa = P0 + a * D
        return slope_s - np.trace(linalg.cho_solve((_chol(Pa), True), D))

    if slope(0.0) >= 0:
        return np.array(old)
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if slope(mid) < 0:
            lo = mid
        else:
            hi = mid
    return _precision(P0 + lo * D)


def update_covariances(scatter, sigma_reg_prev, reg, condition_bound=True):
    """Regularized covariance update with its constraints enforced.

    Starts from ``rho * target + (1 - rho) * scatter``. With
    ``condition_bound`` a candidate exceeding ``kappa`` is shrunk toward the
    target just enough to meet it. If the candidate would raise the EM
    surrogate above its value at ``sigma_reg_prev``, it is replaced by the
    surrogate minimizer on the segment between the two in precision space;
    the segment stays inside the constraint set. ``rho`` never changes.

    Returns ``(sigma, sigma_reg)``.
    """
    scatter = np.asarray(scatter)
    sigma = np.array(scatter)
    for k in range(len(sigma)):
        rho, target = reg.rho[k], reg.target[k]
        if rho >= 1.0:
            continue
        cand = symmetrize((1.0 - rho) * scatter[k] + rho * target)
        if condition_bound and condition_number(cand) > reg.kappa[k]:
            s = robust.smallest_shrinkage(cand, target, reg.kappa[k])
            cand = symmetrize((1.0 - s) * cand + s * target)
        prev = sigma_reg_prev[k]
        if expected_cost(cand, scatter[k]) > expected_cost(prev, scatter[k]):
            cand = _segment_search(prev, cand, scatter[k])
        sigma[k] = symmetrize((cand - rho * target) / (1.0 - rho))
    return sigma, symmetrize(reg.apply(sigma))


def _check_monotone(trace, stage, iteration):
    prev, cur = trace[-2], trace[-1]
    if cur > prev + MONOTONE_RTOL * max(abs(prev), 1.0):
        warnings.warn(f"objective increased after {stage}-step of iteration {iteration}: {prev!r} -> {cur!r}")


def fit(data, cfg, callback=None):
    """Fit the cellwise-robust multi-group mixture.

    The data are robustly standardized per variable before fitting; the
    returned parameters are mapped back to the original scale.

    Parameters
    ----------
    data : GroupedData
    cfg : EstimatorConfig
    callback : callable, optional
        Called with an :class:`IterationState` after initialization and after
        every W-step and EM-step.

    Returns
    -------
    FitResult
    """
    validate(data, cfg)
    h = cfg.resolve_h(data.sizes)
    std, transform = robust.global_standardize(data)
    params, mask = robust.initial_params(std, cfg)
    penalty = cfg.penalty if cfg.penalty is not None else robust.compute_penalty(std, params, mask)
    cfg = replace(cfg, penalty=penalty)

    def report(it, stage):
        val = objective(std, params, mask, penalty)
        trace.append(val.total)
        if callback is not None:
            callback(IterationState(it, stage, params, mask, val, h, cfg.alpha))

    trace = []
    report(0, "init")
    converged = False
    it = 0
    for it in range(1, int(cfg.max_iter) + 1):
        try:
            prev = params.sigma_reg
            mask = w_step(std, params, mask, cfg, penalty)
            report(it, "w")
            _check_monotone(trace, "W", it)
            resp = e_step(std, params, mask)
            pi = m_step_pi(resp, cfg.alpha)
            mu, _, scatter = m_step_moments(std, params, resp, mask)
            sigma, sigma_reg = update_covariances(scatter, params.sigma_reg, params.reg, cfg.condition_bound)
            params = MixtureParams(pi=pi, mu=mu, sigma=sigma, sigma_reg=sigma_reg, reg=params.reg)
            report(it, "em")
            _check_monotone(trace, "EM", it)
        except FactorizationError as err:
            raise FactorizationError(err.pattern, f"iteration {it}") from err
        if np.max(np.abs(prev - params.sigma_reg)) < cfg.eps_conv:
            converged = True
            break

    resp = e_step(std, params, mask)
    return FitResult(
        params=transform.inverse_params(params),
        mask=mask,
        resp=resp,
        objective_trace=tuple(trace),
        iterations=it,
        converged=converged,
        standardization=transform,
        penalty=penalty,
        alpha=cfg.alpha,
        h=h,
    )
