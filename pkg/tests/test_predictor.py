import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from fsbgl.basis import BasisSpec, regular_grid
from fsbgl.covkernels import SmallScaleSpec, pairwise_distances
from fsbgl.dcfit import FitDiagnostics, FittedModel
from fsbgl.errors import ParameterDomainError
from fsbgl.likelihood import SpatialDataset
from fsbgl.predictor import (PredictiveDistribution, Prediction, crps, crps_gaussian,
                             interpolate_mean, predict, read_predictions, score,
                             score_arrays, write_predictions)

from instances import random_precision, random_spec


def crps_quadrature(mu, sigma, y):
    F = lambda x: norm.cdf(x, mu, sigma)
    lo, hi = mu - 40 * sigma, mu + 40 * sigma
    left = quad(lambda x: F(x) ** 2, min(lo, y), y, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    right = quad(lambda x: (1 - F(x)) ** 2, y, max(hi, y), epsabs=1e-13, epsrel=1e-12,
                 limit=200)[0]
    return left + right


def dense_oracle(model, data, T):
    X = data.locations
    spec = model.spec
    psi_o = model.basis.evaluate(X).values
    psi_t = model.basis.evaluate(T).values
    Qi = np.linalg.inv(model.Q)
    d_oo = pairwise_distances(X, X)
    C_oo = np.where(d_oo < spec.support_radius, spec.covariance(d_oo), 0.0)
    np.fill_diagonal(C_oo, spec.variance + spec.nugget)
    S_oo = psi_o @ Qi @ psi_o.T + C_oo
    d_ot = pairwise_distances(X, T)
    S_ot = psi_o @ Qi @ psi_t.T + np.where(d_ot < spec.support_radius, spec.covariance(d_ot), 0)
    S_tt = np.einsum("ij,jk,ik->i", psi_t, Qi, psi_t) + spec.variance + spec.nugget
    A = np.linalg.solve(S_oo, S_ot)
    mu_t = interpolate_mean(X, data.empirical_mean(), T)
    return mu_t[:, None] + A.T @ data.centered(), S_tt - np.sum(S_ot * A, axis=0)


def random_model(rng, n):
    basis = BasisSpec(m_max=int(rng.integers(1, 4)))
    X = rng.random((n, 2))
    spec = random_spec(("tapered_matern", "gaspari_cohn", "wendland_mixture")[rng.integers(3)],
                       rng)
    Q = random_precision(basis.n_columns, rng)
    data = SpatialDataset(X, rng.normal(size=(n, int(rng.integers(1, 5)))))
    return FittedModel(Q, spec, 0.1, FitDiagnostics(), basis), data


def test_predict_matches_dense_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        model, data = random_model(rng, int(rng.integers(10, 201)))
        T = rng.random((15, 2))
        pred = predict(model, data, T, chunk=4)
        mean, var = dense_oracle(model, data, T)
        assert np.max(np.abs(pred.mean - mean)) <= 1e-8 * max(1.0, np.abs(mean).max())
        assert np.max(np.abs(pred.variance - var) / var) <= 1e-8


def test_variance_at_least_nugget_off_sites():
    rng = np.random.default_rng(1)
    model, data = random_model(rng, 80)
    pred = predict(model, data, rng.random((50, 2)))
    assert np.all(pred.variance >= model.spec.nugget)


def test_no_basis_far_target():
    spec = SmallScaleSpec("wendland_mixture", {"alpha1": 0.8, "theta1": 0.1}, 0.05)
    X = regular_grid(4) * 0.3
    data = SpatialDataset(X, np.random.default_rng(2).normal(size=(16, 3)))
    model = FittedModel(np.eye(2), spec, 0.1, FitDiagnostics(), basis=None)
    pred = predict(model, data, np.array([[0.9, 0.9]]))
    mu = interpolate_mean(X, data.empirical_mean(), [[0.9, 0.9]])
    assert np.allclose(pred.mean, mu) and pred.variance[0] == pytest.approx(0.85)


def test_zero_nugget_coincident_target_guard():
    spec = SmallScaleSpec("wendland_mixture", {"alpha1": 1.0, "theta1": 0.3}, 0.0)
    X = np.random.default_rng(3).random((10, 2))
    data = SpatialDataset(X, np.ones((10, 1)))
    model = FittedModel(np.eye(1), spec, 0.1, FitDiagnostics(), BasisSpec(m_max=0))
    with pytest.raises(ParameterDomainError):
        predict(model, data, X[:2])
    with pytest.raises(ParameterDomainError):
        predict(model, data, np.zeros((0, 2)))


def test_observed_targets_rmse_band():
    rng = np.random.default_rng(4)
    model, data = random_model(rng, 120)
    pred = predict(model, data, data.locations)
    s = score(pred, data.values)
    assert 0 < s.rmse < data.values.std()


def test_interpolate_mean_exact_and_bilinear():
    X = regular_grid(5)
    v = 2 * X[:, 0] - X[:, 1] + 0.3
    T = np.random.default_rng(5).uniform(0.1, 0.9, (30, 2))
    assert np.allclose(interpolate_mean(X, v, X), v)
    assert np.allclose(interpolate_mean(X, v, T), 2 * T[:, 0] - T[:, 1] + 0.3)
    scattered = np.random.default_rng(6).random((40, 2))
    w = scattered @ [1.0, 2.0]
    assert np.allclose(interpolate_mean(scattered, w, scattered), w)


def test_crps_standard_value():
    assert crps_gaussian(0, 1, 0) == pytest.approx(crps_quadrature(0, 1, 0), abs=1e-10)
    assert crps_gaussian(0, 1, 0) == pytest.approx(0.23369, abs=1e-5)


def test_crps_matches_quadrature():
    rng = np.random.default_rng(7)
    for _ in range(100):
        mu, sigma = rng.normal(0, 3), rng.uniform(0.05, 4)
        y = mu + sigma * rng.normal(0, 2)
        assert crps_gaussian(mu, sigma, y) == pytest.approx(crps_quadrature(mu, sigma, y),
                                                            abs=1e-6)


@given(st.floats(-50, 50), st.floats(0.01, 20), st.floats(-50, 50), st.floats(0.1, 10))
def test_crps_homogeneous_and_bounded(mu, sigma, y, c):
    v = crps_gaussian(mu, sigma, y)
    assert crps_gaussian(c * mu, c * sigma, c * y) == pytest.approx(c * v, rel=1e-9, abs=1e-12)
    assert 0 <= v <= abs(y - mu) + sigma


@pytest.mark.parametrize("z", [8.0, -8.0])
def test_crps_tail_ratio(z):
    v = crps_gaussian(1.0, 2.0, 1.0 + 2.0 * z)
    assert v / abs(2.0 * z) == pytest.approx(1.0, abs=0.1)
    far = crps_gaussian(1.0, 2.0, 1.0 + 2.0 * 1e4 * np.sign(z))
    assert far / 2e4 == pytest.approx(1.0, rel=1e-4)


def test_crps_domain():
    with pytest.raises(ParameterDomainError):
        crps_gaussian(0, 0, 1)
    with pytest.raises(ParameterDomainError):
        PredictiveDistribution(0.0, 0.0)


def test_score_limits_and_rmse():
    d = [PredictiveDistribution(1.5, 1e-18)]
    s = score(d, [1.5])
    assert s.mean_crps == pytest.approx(0, abs=1e-8) and s.mean_crps == s.median_crps
    rng = np.random.default_rng(8)
    mu, y = rng.normal(size=1000), rng.normal(size=1000)
    dists = [PredictiveDistribution(a, 1.0) for a in mu]
    assert score(dists, y).rmse == pytest.approx(math.sqrt(np.mean((mu - y) ** 2)), rel=1e-12)
    assert crps(dists[0], y[0]) == crps_gaussian(mu[0], 1.0, y[0])
    with pytest.raises(ParameterDomainError):
        score(dists, y[:10])


def test_predictions_csv_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    pred = Prediction(rng.random((4, 2)), rng.normal(size=(4, 3)), rng.uniform(0.1, 1, 4))
    y = rng.normal(size=(4, 3))
    write_predictions(tmp_path / "p.csv", pred, y)
    mu, sd, yy = read_predictions(tmp_path / "p.csv")
    assert np.array_equal(mu, pred.mean.ravel()) and np.array_equal(yy, y.ravel())
    a, b = score_arrays(mu, sd, yy), score(pred, y)
    assert a.mean_crps == pytest.approx(b.mean_crps, rel=1e-14)
    assert a.rmse == b.rmse
