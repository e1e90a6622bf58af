"""Gaussian likelihood of the low-rank-plus-sparse model.

Two evaluators of

    L(Q, D) = log det(Psi Q^-1 Psi' + D) + tr(S (Psi Q^-1 Psi' + D)^-1)

are provided: ``negloglik_full`` forms the n x n covariance densely and is
meant as an oracle, ``negloglik_reduced`` uses the determinant lemma and the
Woodbury identity on precomputed J-sized statistics.  S is the 1/m sample
covariance of the replicates after removing the pooled empirical mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .cholesky import chol_dense, factorize, logdet_chol
from .errors import NotPositiveDefiniteError, NumericalDomainError, OracleScaleError

FULL_ORACLE_MAX_N = 2000


@dataclass
class SpatialDataset:
    """Locations (n x 2) and replicate fields (n x m).

    ``mean`` is an optional per-site mean; when absent the pooled
    empirical mean over replicates is used for centering.
    """

    locations: np.ndarray
    values: np.ndarray
    mean: np.ndarray | None = None

    def __post_init__(self):
        self.locations = np.atleast_2d(np.asarray(self.locations, dtype=float))
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != self.locations.shape[0]:
            raise ValueError("values must have one row per location")
        if self.mean is not None:
            self.mean = np.asarray(self.mean, dtype=float)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def m(self):
        return self.values.shape[1]

    def empirical_mean(self):
        return self.mean if self.mean is not None else self.values.mean(axis=1)

    def centered(self):
        return self.values - self.empirical_mean()[:, None]

    def sample_covariance(self):
        Yc = self.centered()
        return Yc @ Yc.T / self.m


@dataclass(frozen=True)
class SufficientStats:
    """Everything the reduced likelihood needs from (data, Psi, D).

    gram   Psi' D^-1 Psi, (J+1) x (J+1)
    cross  Psi' D^-1 Yc,  (J+1) x m
    """

    gram: np.ndarray
    cross: np.ndarray
    trace_sdinv: float
    logdet_d: float
    m: int
    n: int

    @property
    def dim(self):
        return self.gram.shape[0]

    @property
    def b(self):
        """Psi' D^-1 S D^-1 Psi."""
        return self.cross @ self.cross.T / self.m


@dataclass(frozen=True)
class ObjectiveValue:
    negloglik: float
    penalty: float

    @property
    def total(self):
        return self.negloglik + self.penalty


def center_and_stats(dataset, psi, D=None, factor=None, backend=None):
    """Center the replicates and compute the sufficient statistics.

    Either ``D`` (sparse or dense SPD) or an existing ``factor`` of it must be
    given; D is factorized exactly once.
    """
    psi = np.asarray(psi, dtype=float).reshape(dataset.n, -1)
    if factor is None:
        if D is None:
            raise ValueError("need D or its factor")
        factor = factorize(D, backend=backend, label="D")
    Yc = dataset.centered()
    k = psi.shape[1]
    WV = factor.half_solve(np.hstack([psi, Yc]))
    W, V = WV[:, :k], WV[:, k:]
    m = dataset.m
    return SufficientStats(
        gram=_sym(W.T @ W),
        cross=W.T @ V,
        trace_sdinv=float(np.sum(V * V)) / m,
        logdet_d=factor.logdet(),
        m=m,
        n=dataset.n,
    )


def _sym(A):
    return 0.5 * (A + A.T)


def _dense(Q):
    return Q.toarray() if sp.issparse(Q) else np.asarray(Q, dtype=float)


def negloglik_full(Q, D, dataset, psi):
    """Dense evaluation of L(Q, D); guarded to n <= 2000."""
    n = dataset.n
    if n > FULL_ORACLE_MAX_N:
        raise OracleScaleError(f"dense likelihood oracle limited to n <= {FULL_ORACLE_MAX_N}")
    Q = _dense(Q)
    psi = np.asarray(psi, dtype=float).reshape(n, -1)
    Dd = D.toarray() if sp.issparse(D) else np.asarray(D, dtype=float)
    if psi.shape[1]:
        Lq = chol_dense(Q, "Q")
        A = sla.solve_triangular(Lq, psi.T, lower=True)  # L^-1 Psi'
        cov = A.T @ A + Dd
    else:
        cov = Dd.copy()
    L = chol_dense(_sym(cov), "Psi Q^-1 Psi' + D")
    R = sla.solve_triangular(L, dataset.centered(), lower=True)
    return logdet_chol(L) + float(np.sum(R * R)) / dataset.m


def negloglik_reduced(Q, stats):
    """Woodbury/determinant-lemma form of L(Q, D).

    Keeps the Q-independent terms log det D and tr(S D^-1), so the same value
    serves small-scale parameter estimation and Q estimation.
    """
    Q = _dense(Q)
    if stats.dim == 0:
        return stats.logdet_d + stats.trace_sdinv
    try:
        La = chol_dense(Q + stats.gram, "Q + Psi' D^-1 Psi")
    except NotPositiveDefiniteError as exc:
        raise NumericalDomainError(str(exc)) from exc
    Lq = chol_dense(Q, "Q")
    R = sla.solve_triangular(La, stats.cross, lower=True)
    return (logdet_chol(La) + stats.logdet_d - logdet_chol(Lq)
            + stats.trace_sdinv - float(np.sum(R * R)) / stats.m)


def penalty(Q, lam):
    """lam * sum of |Q_ij| over off-diagonal entries; the diagonal is free."""
    Q = _dense(Q)
    off = ~np.eye(Q.shape[0], dtype=bool)
    return float(lam) * float(np.abs(Q[off]).sum())


def objective(Q, stats, lam):
    """Penalized negative log-likelihood (constants retained)."""
    return ObjectiveValue(negloglik_reduced(Q, stats), penalty(Q, lam))


def loglik(Q, stats):
    """Gaussian log-likelihood of the m replicates, all constants included."""
    return -0.5 * stats.m * (negloglik_reduced(Q, stats) + stats.n * np.log(2 * np.pi))
