"""Synthetic multi-group mixture data with cellwise contamination."""

import math
import zlib
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .gaussian import symmetrize
from .model import CellMask, GroupedData


def rng_for(seed, tag):
    """Independent generator for ``(seed, tag)``; stable across runs and platforms."""
    entropy = [int(v) for v in np.atleast_1d(seed)]
    return np.random.default_rng(entropy + [zlib.crc32(tag.encode("utf-8"))])


@dataclass(frozen=True)
class SimulationConfig:
    N: int = 2
    p: int = 10
    n_g: tuple = (100, 100)
    pi_diag: float = 0.9
    mean_mode: str = "zero"  # "zero" or "c-separated"
    c: float = 0.5
    eps_cell: float = 0.0
    gamma_cell: float = 6.0
    seed: int = 0

    def sizes(self):
        if np.isscalar(self.n_g):
            return (int(self.n_g),) * self.N
        return tuple(int(n) for n in self.n_g)


@dataclass(frozen=True)
class GroundTruth:
    pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    labels: tuple  # per group, generating component of each row
    contamination: CellMask  # False marks a replaced cell


def mixture_pi(N, pi_diag):
    if N == 1:
        return np.ones((1, 1))
    pi = np.full((N, N), (1.0 - pi_diag) / (N - 1))
    np.fill_diagonal(pi, pi_diag)
    return pi


def _random_orthogonal(rng, p):
    Q, R = np.linalg.qr(rng.standard_normal((p, p)))
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def random_covariance(p, seed, cond=100.0, max_rounds=10):
    """Random well-conditioned covariance with trace in ``[p/2, 2p]``.

    A random orthogonal frame with log-spaced eigenvalues is rescaled to unit
    diagonal; the eigenvalues of the result are reset to the target spectrum
    and rescaled again, up to ``max_rounds`` times. Variances are then
    multiplied by log-uniform factors on [0.5, 2].
    """
    rng = rng_for(seed, "covariance")
    if p == 1:
        return np.array([[math.exp(rng.uniform(math.log(0.5), math.log(2.0)))]])
    spectrum = np.logspace(0.0, math.log10(cond), p)[rng.permutation(p)]
    vec = _random_orthogonal(rng, p)
    for _ in range(max_rounds):
        C = (vec * spectrum) @ vec.T
        d = np.sqrt(np.diag(C))
        R = symmetrize(C / np.outer(d, d))
        ev, vec = np.linalg.eigh(R)
        if ev[-1] / ev[0] <= cond * 1.01:
            break
        spectrum = np.sort(spectrum)
    scales = np.exp(rng.uniform(math.log(0.5), math.log(2.0), size=p))
    S = R * np.sqrt(np.outer(scales, scales))
    tr = np.trace(S)
    if tr < p / 2:
        S *= (p / 2) / tr
    elif tr > 2 * p:
        S *= (2 * p) / tr
    return symmetrize(S)


def c_separated_means(sigmas, c, seed, max_redraws=100):
    """Means with ``||mu_l - mu_k|| >= c sqrt(p max(lambda1_l, lambda1_k))``.

    Built inductively from ``mu_1 = 0``: each new mean sits on the ray from
    the centroid of the previous means through a standard-normal draw, at the
    smallest distance satisfying every constraint (one with equality).
    """
    sigmas = np.asarray(sigmas)
    N, p = sigmas.shape[0], sigmas.shape[1]
    lam1 = np.array([np.linalg.eigvalsh(s)[-1] for s in sigmas])
    rng = rng_for(seed, "means")
    mus = [np.zeros(p)]
    for k in range(1, N):
        centroid = np.mean(mus, axis=0)
        for _ in range(max_redraws):
            d = rng.standard_normal(p) - centroid
            if d @ d > 1e-24:
                break
        else:
            raise RuntimeError("could not draw a non-degenerate direction")
        a = d @ d
        t_star = 0.0
        for l in range(k):
            off = centroid - mus[l]
            b = 2.0 * d @ off
            r2 = c * c * p * max(lam1[l], lam1[k])
            disc = b * b - 4.0 * a * (off @ off - r2)
            if disc < 0:
                continue
            t_star = max(t_star, (-b + math.sqrt(disc)) / (2.0 * a))
        mus.append(centroid + t_star * d)
    return np.array(mus)


def sample_mggmm(pi, mu, sigma, sizes, seed):
    """Draw each group's rows from its mixture over all components.

    Returns ``(GroupedData, labels)`` with ``labels[g]`` the 0-based
    generating component of every row of group ``g``.
    """
    pi = np.asarray(pi)
    N = pi.shape[0]
    chol = [linalg.cholesky(s, lower=True) for s in sigma]
    groups, labels = [], []
    for g, n in enumerate(sizes):
        rng = rng_for(seed, f"sample-{g}")
        lab = rng.choice(N, size=n, p=pi[g])
        Z = rng.standard_normal((n, len(mu[0])))
        X = np.empty_like(Z)
        for k in range(N):
            rows = lab == k
            X[rows] = mu[k] + Z[rows] @ chol[k].T
        groups.append(X)
        labels.append(lab)
    return GroupedData(groups), tuple(labels)


def _smallest_eigvec(S):
    ev, vec = np.linalg.eigh(S)
    v = vec[:, 0]
    nz = np.flatnonzero(np.abs(v) > 0)
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v


def outlying_cells(mu_J, sigma_J, gamma):
    """Replacement values for the cells ``J`` of a row from component (mu, sigma)."""
    v = _smallest_eigvec(sigma_J)
    maha = v @ np.linalg.solve(sigma_J, v)
    return mu_J + v * gamma * math.sqrt(v.size) / math.sqrt(maha)


def contaminate(data, truth, eps_cell, gamma_cell, seed):
    """Replace ``floor(eps_cell * n_g)`` random cells per variable and group.

    Cells of one row selected across variables form the set ``J`` and are
    replaced jointly along the weakest eigendirection of the generating
    component's ``J``-block. Returns ``(data, mask)``; mask is False where a
    cell was replaced.
    """
    if not 0.0 <= eps_cell < 1.0:
        raise ValueError(f"eps_cell must lie in [0, 1), got {eps_cell}")
    groups, masks = [], []
    for g, X in enumerate(data.groups):
        n, p = X.shape
        rng = rng_for(seed, f"contaminate-{g}")
        m = int(math.floor(eps_cell * n))
        M = np.ones((n, p), dtype=bool)
        for j in range(p):
            M[rng.choice(n, size=m, replace=False), j] = False
        Xc = np.array(X)
        for i in np.flatnonzero(~M.all(axis=1)):
            J = np.flatnonzero(~M[i])
            k = truth.labels[g][i]
            Xc[i, J] = outlying_cells(truth.mu[k][J], truth.sigma[k][np.ix_(J, J)], gamma_cell)
        groups.append(Xc)
        masks.append(M)
    return data.with_groups(groups), CellMask(tuple(masks))


def simulate(cfg):
    """Clean draw plus contamination for a :class:`SimulationConfig`.

    Returns ``(contaminated, truth, clean)``.
    """
    sizes = cfg.sizes()
    if len(sizes) != cfg.N:
        raise ValueError(f"n_g has {len(sizes)} entries for N={cfg.N}")
    sigma = np.array([random_covariance(cfg.p, [cfg.seed, k]) for k in range(cfg.N)])
    if cfg.mean_mode == "zero" or cfg.N == 1:
        mu = np.zeros((cfg.N, cfg.p))
    elif cfg.mean_mode == "c-separated":
        mu = c_separated_means(sigma, cfg.c, cfg.seed)
    else:
        raise ValueError(f"unknown mean_mode {cfg.mean_mode!r}")
    pi = mixture_pi(cfg.N, cfg.pi_diag)
    clean, labels = sample_mggmm(pi, mu, sigma, sizes, cfg.seed)
    partial = GroundTruth(pi, mu, sigma, labels, CellMask.ones(sizes, cfg.p))
    data, mask = contaminate(clean, partial, cfg.eps_cell, cfg.gamma_cell, cfg.seed)
    return data, GroundTruth(pi, mu, sigma, labels, mask), clean
