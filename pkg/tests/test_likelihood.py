import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from fsbgl.errors import OracleScaleError
from fsbgl.likelihood import (SpatialDataset, center_and_stats, loglik, negloglik_full,
                              negloglik_reduced, objective, penalty)

from instances import FAMILIES, random_instance, random_precision


def dense_stats(data, psi, D):
    Dinv = np.linalg.inv(D.toarray())
    Yc = data.values - data.values.mean(axis=1, keepdims=True)
    S = Yc @ Yc.T / data.m
    return {"gram": psi.T @ Dinv @ psi, "cross": psi.T @ Dinv @ Yc,
            "trace": np.trace(S @ Dinv), "logdet": np.linalg.slogdet(D.toarray())[1]}


def test_identity_D():
    rng = np.random.default_rng(0)
    psi = rng.normal(size=(10, 3))
    data = SpatialDataset(rng.random((10, 2)), rng.normal(size=(10, 4)))
    st_ = center_and_stats(data, psi, sp.identity(10, format="csc"))
    assert np.allclose(st_.gram, psi.T @ psi, atol=1e-13)
    assert st_.logdet_d == 0.0


def test_replicate_equal_to_mean_gives_zero_cross():
    rng = np.random.default_rng(1)
    col = rng.normal(size=(12, 1))
    data = SpatialDataset(rng.random((12, 2)), col)
    st_ = center_and_stats(data, rng.normal(size=(12, 2)), sp.identity(12) * 2.0)
    assert np.all(st_.cross == 0) and st_.trace_sdinv == 0


def test_stats_match_dense_inverse():
    rng = np.random.default_rng(2)
    data, psi, D, _, _ = random_instance(rng, n=100, J=12, m=7)
    st_ = center_and_stats(data, psi, D)
    ref = dense_stats(data, psi, D)
    for got, want in ((st_.gram, ref["gram"]), (st_.cross, ref["cross"])):
        assert np.max(np.abs(got - want)) <= 1e-10 * np.max(np.abs(want))
    assert st_.trace_sdinv == pytest.approx(ref["trace"], rel=1e-10)
    assert st_.logdet_d == pytest.approx(ref["logdet"], rel=1e-10)


def test_full_identity_case():
    n = 8
    # replicates +-sqrt(n) e_i have zero mean and S = I
    Y = np.sqrt(n) * np.hstack([np.eye(n), -np.eye(n)])
    data = SpatialDataset(np.random.default_rng(3).random((n, 2)), Y)
    assert negloglik_full(np.eye(1), np.eye(n), data, np.zeros((n, 0))) == pytest.approx(n)


@pytest.mark.parametrize("family", FAMILIES)
def test_reduced_equals_full(family):
    rng = np.random.default_rng(hash(family) % 2**32)
    for _ in range(5):
        data, psi, D, _, Q = random_instance(rng, family=family)
        full = negloglik_full(Q, D, data, psi)
        red = negloglik_reduced(Q, center_and_stats(data, psi, D))
        assert abs(full - red) <= 1e-8 * abs(full)


def test_scaling_data_scales_trace_term():
    rng = np.random.default_rng(4)
    data, psi, D, _, Q = random_instance(rng, n=50, J=4)
    st1 = center_and_stats(data, psi, D)
    st2 = center_and_stats(SpatialDataset(data.locations, 2 * data.values), psi, D)
    assert st2.trace_sdinv == pytest.approx(4 * st1.trace_sdinv, rel=1e-12)
    gap = (negloglik_full(Q, D, SpatialDataset(data.locations, 2 * data.values), psi)
           - negloglik_full(Q, D, data, psi))
    quad = negloglik_full(Q, D, data, psi) - (st1.logdet_d + np.linalg.slogdet(
        psi @ np.linalg.solve(Q, psi.T) + D.toarray())[1] - st1.logdet_d)
    assert gap == pytest.approx(3 * quad, rel=1e-8)


def test_zero_psi_reduces_to_D_terms():
    rng = np.random.default_rng(5)
    data, _, D, _, _ = random_instance(rng, n=40, J=3)
    st_ = center_and_stats(data, np.zeros((40, 3)), D)
    Q = random_precision(3, rng)
    assert negloglik_reduced(Q, st_) == pytest.approx(st_.logdet_d + st_.trace_sdinv, rel=1e-12)


def test_nugget_D_matches_basis_glasso_likelihood_up_to_constant():
    rng = np.random.default_rng(6)
    n, J, tau2 = 50, 5, 0.3
    data, psi, _, _, _ = random_instance(rng, n=n, J=J)
    st_ = center_and_stats(data, psi, sp.identity(n, format="csc") * tau2)
    S = data.sample_covariance()

    def bgl(Q):
        # log det(Q + Psi'Psi/tau2) - log det Q - tr(Psi' S Psi (Q tau2^2 + tau2 Psi'Psi)^-1)
        A = Q + psi.T @ psi / tau2
        return (np.linalg.slogdet(A)[1] - np.linalg.slogdet(Q)[1]
                - np.trace(psi.T @ S @ psi @ np.linalg.inv(A)) / tau2**2)

    gaps = [negloglik_reduced(Q, st_) - bgl(Q) for Q in
            (random_precision(J, rng) for _ in range(3))]
    assert np.ptp(gaps) <= 1e-9 * abs(gaps[0])
    assert gaps[0] == pytest.approx(n * np.log(tau2) + np.trace(S) / tau2, rel=1e-10)


def test_penalty():
    assert penalty(np.diag([1.0, 2.0, 3.0]), 5.0) == 0.0
    Q = np.eye(3)
    Q[0, 2] = Q[2, 0] = 0.5
    Q[1, 2] = Q[2, 1] = -0.5
    assert penalty(Q, 2.0) == pytest.approx(4.0)
    Q = np.array([[1.0, 0.5], [0.5, 1.0]])
    Q[0, 1] = -0.5
    Q[1, 0] = -0.5
    assert penalty(Q, 2.0) == 2.0


@given(st.integers(2, 12), st.floats(0, 10), st.integers(0, 2**31))
def test_penalty_brute_force(p, lam, seed):
    Q = random_precision(p, np.random.default_rng(seed))
    want = sum(abs(Q[i, j]) for i in range(p) for j in range(p) if i != j) * lam
    assert penalty(Q, lam) == pytest.approx(want, rel=1e-12, abs=1e-300)
    assert objective(Q, center_and_stats(SpatialDataset(np.zeros((1, 2)), np.ones((1, 2))),
                                         np.ones((1, p)), np.eye(1)), lam).penalty == \
        pytest.approx(want, rel=1e-12, abs=1e-300)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    data, psi, D, spec, Q = random_instance(rng, n=40, J=5)
    base = negloglik_reduced(Q, center_and_stats(data, psi, D))
    cols = rng.permutation(data.m)
    perm = SpatialDataset(data.locations, data.values[:, cols])
    assert negloglik_reduced(Q, center_and_stats(perm, psi, D)) == pytest.approx(base, rel=1e-10)
    rows = rng.permutation(data.n)
    Dp = D.toarray()[np.ix_(rows, rows)]
    perm = SpatialDataset(data.locations[rows], data.values[rows])
    assert negloglik_reduced(Q, center_and_stats(perm, psi[rows], Dp)) == \
        pytest.approx(base, rel=1e-10)


def test_nugget_shift_on_diagonal_D():
    rng = np.random.default_rng(7)
    d = rng.uniform(0.5, 2, 30)
    data = SpatialDataset(rng.random((30, 2)), rng.normal(size=(30, 3)))
    psi = rng.normal(size=(30, 2))
    a = center_and_stats(data, psi, np.diag(d)).logdet_d
    b = center_and_stats(data, psi, np.diag(d + 0.1)).logdet_d
    assert b - a == pytest.approx(np.sum(np.log((d + 0.1) / d)), rel=1e-12)


def test_loglik_constants():
    rng = np.random.default_rng(8)
    data, psi, D, _, Q = random_instance(rng, n=30, J=3, m=4)
    st_ = center_and_stats(data, psi, D)
    cov = psi @ np.linalg.solve(Q, psi.T) + D.toarray()
    from scipy.stats import multivariate_normal
    Yc = data.centered()
    want = multivariate_normal(np.zeros(30), cov).logpdf(Yc.T).sum()
    assert loglik(Q, st_) == pytest.approx(want, rel=1e-10)


def test_oracle_size_guard():
    data = SpatialDataset(np.zeros((2001, 2)), np.zeros((2001, 1)))
    with pytest.raises(OracleScaleError):
        negloglik_full(np.eye(1), sp.identity(2001), data, np.zeros((2001, 1)))
