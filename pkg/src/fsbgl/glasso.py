"""L1-penalized log-determinant solver.

Solves

    min_{Q > 0}  -log det Q + tr(G Q) + sum_ij Lam_ij |Q_ij|

with Lam_ij = lam off the diagonal and 0 on it (unless the diagonal is
penalized).  The method is a proximal Newton iteration in the style of QUIC
(Hsieh et al., 2014): the Newton direction comes from coordinate descent on
the quadratic model restricted to a free set, and an Armijo line search keeps
every iterate positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg as sla

from .errors import InfeasibleProblemError, NonConvergenceError

ARMIJO = 1e-3
MAX_HALVINGS = 60
ROUNDING = 8 * np.finfo(float).eps


@dataclass(frozen=True)
class GlassoProblem:
    G: np.ndarray
    lam: float
    penalize_diagonal: bool = False

    def __post_init__(self):
        G = np.asarray(self.G, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError("G must be square")
        object.__setattr__(self, "G", 0.5 * (G + G.T))
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lam must be nonnegative")

    @property
    def weights(self):
        p = self.G.shape[0]
        Lam = np.full((p, p), float(self.lam))
        if not self.penalize_diagonal:
            np.fill_diagonal(Lam, 0.0)
        return Lam


@dataclass
class GlassoSolution:
    Q: np.ndarray
    iterations: int
    kkt_residual: float
    objective: float
    sweeps: int = 0


def objective(Q, G, Lam):
    L = sla.cholesky(Q, lower=True)
    return -2.0 * np.sum(np.log(np.diag(L))) + np.sum(G * Q) + np.sum(Lam * np.abs(Q))


def kkt_residual(Q, W, G, Lam):
    """Largest violation of the subgradient optimality conditions.

    Active entries need (G - W)_ij + Lam_ij sign(Q_ij) = 0, inactive ones
    |(G - W)_ij| <= Lam_ij.
    """
    g = G - W
    active = Q != 0
    viol = np.where(active, np.abs(g + Lam * np.sign(Q)), np.maximum(np.abs(g) - Lam, 0.0))
    return float(viol.max()) if viol.size else 0.0


@numba.njit(cache=True)
def _cd_sweeps(T, W, G, Lam, free_i, free_j, max_sweeps, sweep_tol):
    # T holds X + D (the target); U = D W is kept in sync.
    p = W.shape[0]
    U = np.zeros((p, p))
    nf = free_i.shape[0]
    sweeps = 0
    for _ in range(max_sweeps):
        sweeps += 1
        biggest = 0.0
        for f in range(nf):
            i = free_i[f]
            j = free_j[f]
            wu = 0.0
            for k in range(p):
                wu += W[i, k] * U[k, j]
            if i == j:
                a = W[i, i] * W[i, i]
            else:
                a = W[i, j] * W[i, j] + W[i, i] * W[j, j]
            b = G[i, j] - W[i, j] + wu
            c = T[i, j]
            z = c - b / a
            thr = Lam[i, j] / a
            if abs(z) <= thr:
                new = 0.0
            elif z > 0:
                new = z - thr
            else:
                new = z + thr
            mu = new - c
            if mu != 0.0:
                T[i, j] = new
                T[j, i] = new
                if i == j:
                    for k in range(p):
                        U[i, k] += mu * W[i, k]
                else:
                    for k in range(p):
                        U[i, k] += mu * W[j, k]
                        U[j, k] += mu * W[i, k]
                if abs(mu) > biggest:
                    biggest = abs(mu)
        if biggest <= sweep_tol:
            break
    return sweeps


def _inverse(L):
    p = L.shape[0]
    W = sla.cho_solve((L, True), np.eye(p))
    return 0.5 * (W + W.T)


def solve(problem, warm_start=None, tol=1e-6, max_iter=500, max_sweeps=200):
    """Minimize the penalized log-determinant objective.

    Parameters
    ----------
    problem : GlassoProblem
    warm_start : array, optional
        Positive-definite starting point; defaults to diag(1 / G_ii).
    tol : float
        Target for the max KKT residual.
    max_iter : int
        Cap on Newton steps.

    Raises
    ------
    InfeasibleProblemError
        If G has a non-positive diagonal while the diagonal is unpenalized.
    NonConvergenceError
        If the cap is hit; ``.best`` carries the last iterate.
    """
    G = problem.G
    p = G.shape[0]
    Lam = problem.weights
    diag = np.diag(G)
    if np.any(diag <= 0) and not problem.penalize_diagonal:
        raise InfeasibleProblemError("G must have a strictly positive diagonal")

    if warm_start is None:
        X = np.diag(1.0 / diag)
    else:
        X = np.array(warm_start, dtype=float)
        X = 0.5 * (X + X.T)
    try:
        L = sla.cholesky(X, lower=True)
    except np.linalg.LinAlgError:
        X = np.diag(1.0 / diag)
        L = sla.cholesky(X, lower=True)
    W = _inverse(L)
    f = -2.0 * np.sum(np.log(np.diag(L))) + np.sum(G * X) + np.sum(Lam * np.abs(X))
    total_sweeps = 0
    iu = np.triu_indices(p)

    for it in range(max_iter + 1):
        kkt = kkt_residual(X, W, G, Lam)
        if kkt <= tol:
            return GlassoSolution(X, it, kkt, f, total_sweeps)
        if it == max_iter:
            break
        grad = G - W
        free = (X[iu] != 0) | (np.abs(grad[iu]) > Lam[iu]) | (iu[0] == iu[1])
        fi = iu[0][free].astype(np.int64)
        fj = iu[1][free].astype(np.int64)
        wmax = float(np.max(np.diag(W)))
        sweep_tol = max(1e-14, 1e-3 * kkt / (wmax * wmax))
        T = X.copy()
        total_sweeps += _cd_sweeps(T, W, G, Lam, fi, fj, max_sweeps, sweep_tol)
        D = T - X
        delta = np.sum(grad * D) + np.sum(Lam * np.abs(T)) - np.sum(Lam * np.abs(X))

        alpha = 1.0
        for _ in range(MAX_HALVINGS):
            Xn = T if alpha == 1.0 else X + alpha * D
            try:
                Ln = sla.cholesky(Xn, lower=True)
            except np.linalg.LinAlgError:
                alpha *= 0.5
                continue
            fn = -2.0 * np.sum(np.log(np.diag(Ln))) + np.sum(G * Xn) + np.sum(Lam * np.abs(Xn))
            # near the optimum the decrease drops below rounding in f
            if fn <= f + alpha * ARMIJO * delta + ROUNDING * abs(f):
                break
            alpha *= 0.5
        else:
            # no decrease available at machine precision
            kkt = kkt_residual(X, W, G, Lam)
            if kkt <= max(tol, 1e-9):
                return GlassoSolution(X, it, kkt, f, total_sweeps)
            raise NonConvergenceError(
                f"line search stalled with KKT residual {kkt:.3e}",
                best=GlassoSolution(X, it, kkt, f, total_sweeps))
        X, L, f = Xn, Ln, fn
        W = _inverse(L)

    kkt = kkt_residual(X, W, G, Lam)
    raise NonConvergenceError(
        f"no convergence in {max_iter} Newton steps (KKT residual {kkt:.3e})",
        best=GlassoSolution(X, max_iter, kkt, f, total_sweeps))
