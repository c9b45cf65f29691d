"""Accuracy of fitted parameters and of the flagged cells."""

import numpy as np
from scipy import linalg


def kl_divergence(sigma_hat, sigma_true):
    """``tr(S_hat S^-1) - p - log det(S_hat S^-1)`` for positive definite inputs."""
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    sigma_true = np.asarray(sigma_true, dtype=float)
    if sigma_hat.shape != sigma_true.shape:
        raise ValueError(f"shape mismatch {sigma_hat.shape} vs {sigma_true.shape}")
    try:
        L_true = linalg.cholesky(sigma_true, lower=True)
        L_hat = linalg.cholesky(sigma_hat, lower=True)
    except linalg.LinAlgError:
        raise ValueError("KL divergence needs positive definite matrices")
    p = sigma_true.shape[0]
    A = linalg.cho_solve((L_true, True), sigma_hat)
    logdet = 2.0 * (np.sum(np.log(np.diag(L_hat))) - np.sum(np.log(np.diag(L_true))))
    return float(np.trace(A) - p - logdet)


def kl_mean(sigmas_hat, sigmas_true):
    return float(np.mean([kl_divergence(a, b) for a, b in zip(sigmas_hat, sigmas_true, strict=True)]))


def mse_mu(mu_hat, mu_true):
    """Per-component mean squared coordinate error, averaged over components."""
    mu_hat = np.atleast_2d(np.asarray(mu_hat, dtype=float))
    mu_true = np.atleast_2d(np.asarray(mu_true, dtype=float))
    if mu_hat.shape != mu_true.shape:
        raise ValueError(f"shape mismatch {mu_hat.shape} vs {mu_true.shape}")
    return float(np.mean(np.mean((mu_hat - mu_true) ** 2, axis=1)))


def mse_pi(pi_hat, pi_true):
    pi_hat = np.asarray(pi_hat, dtype=float)
    pi_true = np.asarray(pi_true, dtype=float)
    if pi_hat.shape != pi_true.shape:
        raise ValueError(f"shape mismatch {pi_hat.shape} vs {pi_true.shape}")
    return float(np.sum((pi_hat - pi_true) ** 2) / pi_true.shape[0] ** 2)


def flag_scores(mask_hat, truth_mask):
    """Precision, recall and F1 of flagged cells (``False`` entries are positives).

    Empty denominators give 0.
    """
    a, b = _masks(mask_hat), _masks(truth_mask)
    shapes_a, shapes_b = [np.shape(m) for m in a], [np.shape(m) for m in b]
    if shapes_a != shapes_b:
        raise ValueError(f"mask shapes differ: {shapes_a} vs {shapes_b}")
    hat = np.concatenate([np.ravel(m) for m in a]).astype(bool)
    true = np.concatenate([np.ravel(m) for m in b]).astype(bool)
    tp = int(np.sum(~hat & ~true))
    fp = int(np.sum(~hat & true))
    fn = int(np.sum(hat & ~true))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _masks(m):
    return m.masks if hasattr(m, "masks") else m
