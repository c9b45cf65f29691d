"""Robust standardization, starting values and hyperparameters.

Contains the univariate MCD, a chi-square quantile, the global robust
standardization, the cellwise-robust per-group starting values, the
condition-number driven regularization (targets, weights, bounds) and the
flagging penalties.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import erfinv, gammainc, gammaln

from ._mixture import component_log_density, log_weights, responsibilities
from .gaussian import LOG_2PI, FactorizationError, condition_number, symmetrize
from .model import CellMask, MixtureParams, PenaltyMatrix, RegularizationSpec, Standardization

RHO_FLOOR = 1e-6
KAPPA_MIN = 100.0
FLAG_PROB = 0.99


@dataclass(frozen=True)
class UnivariateRobustEstimate:
    location: float
    scale: float
    subset_size: int


def default_subset_size(n):
    return n // 2 + 1


def chi2_cdf(x, df):
    if x <= 0:
        return 0.0
    return float(gammainc(0.5 * df, 0.5 * x))


def _chi2_logpdf(x, df):
    k = 0.5 * df
    return (k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - gammaln(k)


def chi2_quantile(prob, df):
    """Quantile of the chi-square distribution.

    Newton iteration on the regularized lower incomplete gamma function,
    safeguarded by a bracket that falls back to bisection.
    """
    if not 0.0 < prob < 1.0:
        raise ValueError(f"prob must lie in (0, 1), got {prob}")
    if df < 1:
        raise ValueError(f"df must be at least 1, got {df}")
    lo, hi = 0.0, max(1.0, float(df))
    while chi2_cdf(hi, df) < prob:
        lo, hi = hi, 2.0 * hi
    # Wilson-Hilferty starting point, pulled into the bracket
    z = math.sqrt(2.0) * float(erfinv(2.0 * prob - 1.0))
    c = 2.0 / (9.0 * df)
    x = df * max(1.0 - c + z * math.sqrt(c), 1e-3) ** 3
    if not lo < x < hi:
        x = 0.5 * (lo + hi)
    for _ in range(200):
        f = chi2_cdf(x, df) - prob
        if f < 0:
            lo = x
        else:
            hi = x
        step = f / math.exp(_chi2_logpdf(x, df))
        x_new = x - step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) < 1e-10 or hi - lo < 1e-10:
            return x_new
        x = x_new
    return x


def mcd_consistency_factor(h, n):
    """Multiplier making the h-subset standard deviation consistent at the normal."""
    frac = h / n
    if frac >= 1.0:
        return 1.0
    cutoff = chi2_quantile(frac, 1)
    return math.sqrt(frac / chi2_cdf(cutoff, 3))


def univariate_mcd(values, h):
    """Univariate MCD: the h-window of sorted values with the smallest variance.

    Ties in variance go to the window with the smallest start index. The scale
    is consistency-corrected and floored at ``1e-12 * (1 + |location|)``.
    """
    y = np.sort(np.asarray(values, dtype=float).ravel())
    n = y.size
    if n < 2:
        raise ValueError(f"univariate MCD needs at least 2 values, got {n}")
    h = int(h)
    if not 2 <= h <= n:
        raise ValueError(f"subset size {h} outside [2, {n}]")

    # running sums on data shifted by the median to limit cancellation
    shift = y[n // 2]
    z = y - shift
    c1 = np.concatenate(([0.0], np.cumsum(z)))
    c2 = np.concatenate(([0.0], np.cumsum(z * z)))
    s1 = c1[h:] - c1[:-h]
    s2 = c2[h:] - c2[:-h]
    approx = (s2 - s1 * s1 / h) / (h - 1)
    # re-evaluate near-minimal windows exactly so ties resolve deterministically
    cand = np.flatnonzero(approx <= approx.min() + 1e-9 * s2.max() / h)
    exact = np.array([np.var(y[s:s + h], ddof=1) for s in cand])
    start = int(cand[np.flatnonzero(exact == exact.min())[0]])
    window = y[start:start + h]
    loc = float(np.mean(window))
    loc = min(max(loc, float(window[0])), float(window[-1]))
    scale = math.sqrt(float(exact.min())) * mcd_consistency_factor(h, n)
    scale = max(scale, 1e-12 * (1.0 + abs(loc)))
    return UnivariateRobustEstimate(location=loc, scale=scale, subset_size=h)


def global_standardize(data):
    """Center and scale each variable by the univariate MCD of the pooled column."""
    X, _ = data.stacked()
    n = X.shape[0]
    h = default_subset_size(n)
    ests = [univariate_mcd(X[:, j], h) for j in range(X.shape[1])]
    transform = Standardization(
        center=np.array([e.location for e in ests]),
        scale=np.array([e.scale for e in ests]),
    )
    return data.with_groups([transform.transform(g) for g in data.groups]), transform


def initial_pi(N, alpha):
    if N == 1:
        return np.ones((1, 1))
    pi = np.full((N, N), (1.0 - alpha) / (N - 1))
    np.fill_diagonal(pi, alpha)
    return pi


def nearest_psd(a, rel_floor=1e-8):
    ev, vec = np.linalg.eigh(symmetrize(a))
    ev = np.maximum(ev, rel_floor * max(ev[-1], 0.0))
    return symmetrize((vec * ev) @ vec.T)


def cellwise_start(X):
    """Rough cellwise-robust mean and covariance of one group.

    Cells whose univariate robust z-score exceeds the 0.99 chi-square(1)
    cutoff are ignored; the covariance is built from pairwise complete
    cells and projected onto the PSD cone.
    """
    n, p = X.shape
    h = default_subset_size(n)
    cutoff = math.sqrt(chi2_quantile(FLAG_PROB, 1))
    keep = np.ones((n, p), dtype=bool)
    for j in range(p):
        est = univariate_mcd(X[:, j], h)
        keep[:, j] = np.abs(X[:, j] - est.location) / est.scale <= cutoff
    mu = np.array([X[keep[:, j], j].mean() for j in range(p)])
    D = np.where(keep, X - mu, 0.0)
    K = keep.astype(float)
    counts = K.T @ K
    cov = (D.T @ D) / np.maximum(counts - 1.0, 1.0)
    cov[counts < 2] = 0.0
    return mu, nearest_psd(cov)


def smallest_shrinkage(sigma, target, kappa, tol=1e-6):
    """Smallest ``r`` in [0, 1] with ``cond((1 - r) sigma + r target) <= kappa``.

    The feasible set is an interval ending at 1 whenever ``cond(target) <=
    kappa``, so bisection applies; otherwise a 1e-3 grid is scanned.
    """
    def feasible(r):
        return condition_number((1.0 - r) * sigma + r * target) <= kappa

    if feasible(0.0):
        return 0.0
    if feasible(1.0):
        lo, hi = 0.0, 1.0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if feasible(mid):
                hi = mid
            else:
                lo = mid
        return hi
    for r in np.arange(1, 1001) * 1e-3:
        if feasible(r):
            return float(r)
    return 1.0


def compute_regularization(sigma0, data, mask):
    """Targets, bounds and smallest admissible mixing weights per component.

    ``target[k]`` holds squared univariate MCD scales of group k's unflagged
    cells, ``kappa[k] = max(1.1 cond(target[k]), 100)`` and ``rho[k]`` is the
    smallest weight (floored at 1e-6) keeping the condition number of the
    regularized start within ``kappa[k]``.
    """
    sigma0 = symmetrize(sigma0)
    targets, rhos, kappas = [], [], []
    for k, (X, M) in enumerate(zip(data.groups, mask.masks)):
        scales = []
        for j in range(X.shape[1]):
            col = X[M[:, j], j]
            scales.append(univariate_mcd(col, default_subset_size(col.size)).scale)
        target = np.diag(np.square(scales))
        kappa = max(1.1 * condition_number(target), KAPPA_MIN)
        targets.append(target)
        kappas.append(kappa)
        rhos.append(max(smallest_shrinkage(sigma0[k], target, kappa), RHO_FLOOR))
    return RegularizationSpec(np.array(targets), np.array(rhos), np.array(kappas))


def initial_params(data, cfg):
    """Starting parameters and the all-observed starting mask."""
    N, p = data.N, data.p
    pi = initial_pi(N, cfg.alpha)
    starts = [cellwise_start(X) for X in data.groups]
    mu = np.array([s[0] for s in starts])
    sigma = np.array([s[1] for s in starts])
    mask = CellMask.ones(data.sizes, p)
    reg = compute_regularization(sigma, data, mask)
    params = MixtureParams(pi=pi, mu=mu, sigma=sigma, sigma_reg=symmetrize(reg.apply(sigma)), reg=reg)
    return params, mask


def compute_penalty(data, params0, mask0):
    """Flagging cost per cell from the starting responsibilities.

    ``q = chi2_{1,0.99} + ln(2 pi) + sum_k t_k ln C_kj`` with
    ``C_kj = 1 / (sigma_reg_k^{-1})_jj``; negative values are clamped to 0.
    """
    X, gid = data.stacked()
    W = mask0.stacked()
    logphi = component_log_density(X, W, params0.mu, params0.sigma_reg)
    T = responsibilities(log_weights(params0.pi, gid), logphi)
    log_c = np.empty((params0.N, params0.p))
    for k in range(params0.N):
        try:
            L = linalg.cholesky(params0.sigma_reg[k], lower=True)
        except linalg.LinAlgError:
            raise FactorizationError(np.ones(params0.p, bool), f"component {k} in penalty")
        prec_diag = np.diag(linalg.cho_solve((L, True), np.eye(params0.p)))
        log_c[k] = -np.log(prec_diag)
    Q = chi2_quantile(FLAG_PROB, 1) + LOG_2PI + T @ log_c
    if np.any(Q < 0):
        warnings.warn(f"{int(np.sum(Q < 0))} flagging penalties were negative and clamped to 0")
        Q = np.maximum(Q, 0.0)
    cuts = np.cumsum(data.sizes)[:-1]
    return PenaltyMatrix(tuple(np.split(Q, cuts)))
