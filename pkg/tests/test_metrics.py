import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellmggmm.metrics import flag_scores, kl_divergence, kl_mean, mse_mu, mse_pi
from conftest import random_spd


def test_kl_identity():
    rng = np.random.default_rng(0)
    S = random_spd(rng, 4)
    assert abs(kl_divergence(S, S)) < 1e-10


def test_kl_examples():
    assert kl_divergence(2 * np.eye(2), np.eye(2)) == pytest.approx(0.6137056, abs=1e-7)
    assert kl_divergence(np.eye(2), 2 * np.eye(2)) == pytest.approx(0.3862944, abs=1e-7)


def test_kl_direct_formula():
    rng = np.random.default_rng(1)
    for _ in range(20):
        A, B = random_spd(rng, 3), random_spd(rng, 3)
        M = A @ np.linalg.inv(B)
        ref = np.trace(M) - 3 - math.log(np.linalg.det(M))
        assert kl_divergence(A, B) == pytest.approx(ref, rel=1e-10)


def test_kl_positive_under_perturbation():
    rng = np.random.default_rng(2)
    S = random_spd(rng, 4)
    for _ in range(100):
        E = rng.standard_normal((4, 4)) * 0.05
        assert kl_divergence(S + E @ E.T, S) > 0


def test_kl_rejects_non_pd_and_shapes():
    with pytest.raises(ValueError):
        kl_divergence(np.diag([1.0, -1.0]), np.eye(2))
    with pytest.raises(ValueError):
        kl_divergence(np.eye(2), np.eye(3))


def test_kl_mean():
    assert kl_mean([2 * np.eye(2), np.eye(2)], [np.eye(2), 2 * np.eye(2)]) == pytest.approx(0.5, abs=1e-12)


def test_mse_examples():
    mu = np.array([[1.0, 2.0], [3.0, -1.0]])
    assert mse_mu(mu, mu) == 0.0
    assert mse_mu(mu + 1.0, mu) == pytest.approx(1.0)
    assert mse_pi(np.full((2, 2), 0.5), np.eye(2)) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        mse_pi(np.eye(2), np.eye(3))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), N=st.integers(1, 5))
def test_mse_pi_row_permutation_invariant(seed, N):
    rng = np.random.default_rng(seed)
    a, b = rng.dirichlet(np.ones(N), N), rng.dirichlet(np.ones(N), N)
    perm = rng.permutation(N)
    assert mse_pi(a[perm], b[perm]) == pytest.approx(mse_pi(a, b), rel=1e-12, abs=1e-15)


def test_flag_scores_exact():
    truth = [np.array([[True, False], [False, True]])]
    assert flag_scores(truth, truth) == (1.0, 1.0, 1.0)


def test_flag_scores_nothing_flagged():
    truth = [np.array([[True, False]])]
    assert flag_scores([np.ones((1, 2), bool)], truth) == (0.0, 0.0, 0.0)


def test_flag_scores_counts():
    # 8 true positives, 2 false positives, 2 false negatives
    hat = np.ones(20, bool)
    true = np.ones(20, bool)
    hat[:10] = False
    true[:8] = False
    true[10:12] = False
    p, r, f = flag_scores([hat.reshape(4, 5)], [true.reshape(4, 5)])
    assert (p, r, f) == pytest.approx((0.8, 0.8, 0.8))


def test_flag_scores_swap_symmetry():
    rng = np.random.default_rng(3)
    a, b = rng.random((6, 4)) < 0.6, rng.random((6, 4)) < 0.7
    p1, r1, f1 = flag_scores([a], [b])
    p2, r2, f2 = flag_scores([b], [a])
    assert (p1, r1, f1) == pytest.approx((r2, p2, f2))


def test_flag_scores_shape_mismatch():
    with pytest.raises(ValueError):
        flag_scores([np.ones((2, 3), bool)], [np.ones((3, 2), bool)])
