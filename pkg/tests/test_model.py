import numpy as np
import pytest
from scipy.stats import multivariate_normal

from saltmodel.hmm import TransitionModel
from saltmodel.model import (SaltParams, ar_filter, e_step, emission_log_likelihoods, lag_design,
                             lag_windows, latent_trajectory, predictive_means)
from saltmodel.tensor import ShapeError, TuckerFactors, materialize, superdiagonal


def random_params(seed, N=3, L=2, D=2, H=2, cp=False):
    rng = np.random.default_rng(seed)
    factors = []
    for _ in range(H):
        G = superdiagonal(rng.normal(size=D)) if cp else rng.normal(size=(D, D, D))
        factors.append(TuckerFactors(0.5 * rng.normal(size=(N, D)), 0.5 * rng.normal(size=(N, D)),
                                     0.5 * rng.normal(size=(L, D)), G))
    S = rng.normal(size=(H, N, N))
    Sigma = S @ S.transpose(0, 2, 1) + np.eye(N)
    return SaltParams(factors, rng.normal(size=(H, N)), Sigma, TransitionModel.uniform(H, 0.5),
                      "cp" if cp else "tucker")


def test_lag_windows_layout():
    y = np.arange(12.0).reshape(6, 2)
    X = lag_windows(y, 3)
    assert X.shape == (3, 2, 3)
    # frame t = 3: columns hold y_2, y_1, y_0
    np.testing.assert_array_equal(X[0], np.stack([y[2], y[1], y[0]], axis=1))
    Xf, Y = lag_design(y, 3)
    np.testing.assert_array_equal(Xf[0], X[0].ravel())
    np.testing.assert_array_equal(Y, y[3:])


def test_lag_windows_too_short():
    with pytest.raises(ShapeError):
        lag_windows(np.zeros((3, 2)), 3)


def test_standard_normal_at_zero():
    f = TuckerFactors(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1, 1)))
    p = SaltParams([f], np.zeros((1, 1)), np.ones((1, 1, 1)), TransitionModel(np.ones((1, 1)), [1.0]))
    ll = emission_log_likelihoods(p, np.zeros((5, 1)))
    np.testing.assert_allclose(ll, -0.5 * np.log(2 * np.pi), rtol=1e-15)
    assert ll.shape == (4, 1)


def test_perfect_predictor():
    a, sigma2, N = 0.8, 0.3, 2
    # y_t = a y_{t-1} exactly, encoded as U = a I, V = I, W = [1], G_(1) = [I]
    G = np.zeros((N, N, 1))
    G[0, 0, 0] = G[1, 1, 0] = 1.0
    f = TuckerFactors(a * np.eye(N), np.eye(N), np.ones((1, 1)), G)
    p = SaltParams([f], np.zeros((1, N)), sigma2 * np.eye(N)[None], TransitionModel(np.ones((1, 1)), [1.0]))
    y = np.array([[1.0, -2.0]]) * a ** np.arange(6)[:, None]
    np.testing.assert_allclose(emission_log_likelihoods(p, y), N * -0.5 * np.log(2 * np.pi * sigma2))


@pytest.mark.parametrize("cp", [False, True])
def test_emissions_match_dense_gaussian(cp):
    p = random_params(1, cp=cp)
    y = np.random.default_rng(2).normal(size=(20, 3))
    ll = emission_log_likelihoods(p, y)
    for h in range(p.H):
        A = materialize(p.factors[h])
        for t in range(p.L, 20):
            mean = sum(A[:, :, l] @ y[t - l - 1] for l in range(p.L)) + p.b[h]
            ref = multivariate_normal(mean, p.Sigma[h]).logpdf(y[t])
            assert ll[t - p.L, h] == pytest.approx(ref, abs=1e-10)


def test_gauge_invariance():
    p = random_params(3)
    y = np.random.default_rng(4).normal(size=(15, 3))
    q = p.copy()
    s = np.array([2.0, -0.25])
    for f in q.factors:
        f.U = f.U * s
        f.G = f.G / s[:, None, None]
    np.testing.assert_allclose(emission_log_likelihoods(q, y), emission_log_likelihoods(p, y), atol=1e-10)


def test_non_pd_covariance():
    p = random_params(5)
    p.Sigma[0] = -np.eye(3)
    with pytest.raises(np.linalg.LinAlgError):
        emission_log_likelihoods(p, np.zeros((5, 3)))


def test_e_step_shapes():
    p = random_params(6)
    post = e_step(p, np.random.default_rng(7).normal(size=(12, 3)))
    assert post.omega.shape == (10, 2)


def test_latent_trajectory_reconstructs_mean():
    p = random_params(8)
    y = np.random.default_rng(9).normal(size=(25, 3))
    path = np.random.default_rng(10).integers(2, size=23)
    x = latent_trajectory(p, y, path)
    means = predictive_means(p, y)
    for t, h in enumerate(path):
        np.testing.assert_allclose(p.factors[h].U @ x[t] + p.b[h], means[t, h], atol=1e-10)
    assert np.all(latent_trajectory(p, np.zeros((25, 3)), path) == 0)


def test_latent_trajectory_rank_one():
    rng = np.random.default_rng(11)
    f = TuckerFactors(rng.normal(size=(3, 1)), rng.normal(size=(3, 1)), rng.normal(size=(2, 1)),
                      np.full((1, 1, 1), 1.7))
    p = SaltParams([f], np.zeros((1, 3)), np.eye(3)[None], TransitionModel(np.ones((1, 1)), [1.0]))
    y = rng.normal(size=(6, 3))
    x = latent_trajectory(p, y, np.zeros(4, dtype=int))
    X = lag_windows(y, 2)
    np.testing.assert_allclose(x[:, 0], [1.7 * f.V[:, 0] @ Xt @ f.W[:, 0] for Xt in X])


def test_latent_trajectory_bad_path():
    p = random_params(12)
    with pytest.raises(ShapeError):
        latent_trajectory(p, np.zeros((10, 3)), np.zeros(3, dtype=int))


def test_ar_filter():
    W = np.array([[0.5], [0.25]])
    f = TuckerFactors(np.array([[2.0]]), np.array([[3.0]]), W, np.ones((1, 1, 1)))
    p = SaltParams([f], np.zeros((1, 1)), np.eye(1)[None], TransitionModel(np.ones((1, 1)), [1.0]), "cp")
    np.testing.assert_allclose(ar_filter(p, 0, (0, 0)), [3.0, 1.5])

    q = random_params(13)
    A = materialize(q.factors[1])
    np.testing.assert_allclose(ar_filter(q, 1, (2, 0)), A[2, 0], atol=1e-12)
    q.factors[0].G[:] = 0
    assert np.all(ar_filter(q, 0, (1, 1)) == 0)
    with pytest.raises(IndexError):
        ar_filter(q, 0, (3, 0))
    with pytest.raises(IndexError):
        ar_filter(q, 2, (0, 0))


def test_cp_requires_superdiagonal():
    p = random_params(14)
    with pytest.raises(ShapeError):
        SaltParams(p.factors, p.b, p.Sigma, p.tm, "cp")
