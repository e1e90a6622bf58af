import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from fsbgl import glasso
from fsbgl.errors import InfeasibleProblemError
from fsbgl.glasso import GlassoProblem, kkt_residual, solve


def random_G(p, rng, n=None):
    X = rng.normal(size=(n or 3 * p, p))
    return X.T @ X / len(X)


def penalized(Q, G, lam):
    off = ~np.eye(len(G), dtype=bool)
    return -np.linalg.slogdet(Q)[1] + np.sum(G * Q) + lam * np.abs(Q[off]).sum()


def test_zero_penalty_inverts():
    rng = np.random.default_rng(0)
    for p in (2, 5, 20):
        G = random_G(p, rng)
        sol = solve(GlassoProblem(G, 0.0), tol=1e-10)
        Ginv = np.linalg.inv(G)
        assert np.max(np.abs(sol.Q - Ginv)) <= 1e-8 * np.max(np.abs(Ginv))


def test_huge_penalty_gives_diagonal():
    rng = np.random.default_rng(1)
    G = random_G(8, rng)
    sol = solve(GlassoProblem(G, 1e6))
    assert np.max(np.abs(sol.Q - np.diag(1 / np.diag(G)))) <= 1e-10


def brute_force_2x2(G, lam):
    def f(x):
        q11, q12, q22 = x
        det = q11 * q22 - q12 * q12
        if q11 <= 0 or det <= 0:
            return np.inf
        return (-np.log(det) + G[0, 0] * q11 + 2 * G[0, 1] * q12 + G[1, 1] * q22
                + 2 * lam * abs(q12))
    Gi = np.linalg.inv(G)
    best = None
    for x0 in ([1 / G[0, 0], 0.0, 1 / G[1, 1]], [Gi[0, 0], Gi[0, 1], Gi[1, 1]]):
        r = minimize(f, x0, method="Nelder-Mead",
                     options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 20000})
        if best is None or r.fun < best.fun:
            best = r
    # the kink at q12 = 0 stalls simplex methods; compare with the q12 = 0 optimum
    q0 = np.array([1 / G[0, 0], 0.0, 1 / G[1, 1]])
    x = q0 if f(q0) <= best.fun else best.x
    return np.array([[x[0], x[1]], [x[1], x[2]]])


def test_worked_2x2_example():
    G = np.array([[2.0, 0.8], [0.8, 1.0]])
    sol = solve(GlassoProblem(G, 0.1), tol=1e-10)
    assert np.max(np.abs(sol.Q - brute_force_2x2(G, 0.1))) <= 1e-5


def test_random_2x2_against_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(20):
        G = random_G(2, rng, n=5)
        lam = float(rng.uniform(0, 0.6))
        sol = solve(GlassoProblem(G, lam), tol=1e-10)
        assert np.max(np.abs(sol.Q - brute_force_2x2(G, lam))) <= 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 15), st.floats(0.01, 1.0), st.integers(0, 2**31))
def test_kkt_and_descent(p, lam, seed):
    rng = np.random.default_rng(seed)
    G = random_G(p, rng)
    prob = GlassoProblem(G, lam)
    sol = solve(prob)
    W = np.linalg.inv(sol.Q)
    assert kkt_residual(sol.Q, W, G, prob.weights) <= 1e-6
    assert sol.kkt_residual <= 1e-6
    np.linalg.cholesky(sol.Q)
    start = np.diag(1 / np.diag(G))
    assert penalized(sol.Q, G, lam) <= penalized(start, G, lam) + 1e-12
    warm = solve(prob, warm_start=np.eye(p) * 0.5)
    assert penalized(sol.Q, G, lam) <= penalized(np.eye(p) * 0.5, G, lam) + 1e-12
    assert abs(penalized(warm.Q, G, lam) - penalized(sol.Q, G, lam)) <= 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 12), st.integers(0, 2**31))
def test_permutation_equivariance(p, seed):
    rng = np.random.default_rng(seed)
    G = random_G(p, rng)
    perm = rng.permutation(p)
    a = solve(GlassoProblem(G, 0.2), tol=1e-9).Q
    b = solve(GlassoProblem(G[np.ix_(perm, perm)], 0.2), tol=1e-9).Q
    assert np.max(np.abs(a[np.ix_(perm, perm)] - b)) <= 1e-6


def test_support_shrinks_with_penalty():
    rng = np.random.default_rng(3)
    for _ in range(10):
        G = random_G(10, rng)
        lams = [0.05, 0.1, 0.2, 0.4]
        supports = []
        for lam in lams:
            Q = solve(GlassoProblem(G, lam), tol=1e-9).Q
            off = np.abs(Q) > 1e-8
            np.fill_diagonal(off, False)
            supports.append(off)
        for small, big in zip(supports, supports[1:]):
            assert not np.any(big & ~small)


def test_objective_function_matches_direct():
    rng = np.random.default_rng(4)
    G = random_G(5, rng)
    Q = np.linalg.inv(G) + 0.1 * np.eye(5)
    prob = GlassoProblem(G, 0.3)
    assert glasso.objective(Q, G, prob.weights) == pytest.approx(penalized(Q, G, 0.3), rel=1e-12)


def test_nonpositive_diagonal_is_infeasible():
    with pytest.raises(InfeasibleProblemError):
        solve(GlassoProblem(np.array([[0.0, 0.1], [0.1, 1.0]]), 0.5))


def test_invalid_problems():
    with pytest.raises(ValueError):
        GlassoProblem(np.ones((2, 3)), 0.1)
    with pytest.raises(ValueError):
        GlassoProblem(np.eye(2), -1.0)
