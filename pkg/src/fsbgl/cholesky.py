"""Sparse Cholesky factorization with a fill-reducing ordering.

``factorize(A)`` returns an object exposing the few operations the rest of
the package needs: ``logdet``, half solves against ``L`` and full solves.
The factorization is ``P A P^T = L L^T``.  CHOLMOD (scikit-sparse) is used
when it is importable; otherwise a dense LAPACK factor stands in with
``P = I``.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import NotPositiveDefiniteError

try:  # pragma: no cover - exercised implicitly depending on environment
    from sksparse.cholmod import CholmodNotPositiveDefiniteError, cholesky as _cholmod
    HAVE_CHOLMOD = True
except ImportError:  # pragma: no cover
    HAVE_CHOLMOD = False

DEFAULT_BACKEND = "cholmod" if HAVE_CHOLMOD else "dense"
# Below this size a dense LAPACK factor is faster than CHOLMOD for the
# covariance matrices met here (tapers cover a sizable fraction of the domain).
DENSE_MAX_N = 3000


def resolve_backend(n, backend=None):
    """``backend`` if given, else dense up to DENSE_MAX_N and CHOLMOD above."""
    if backend is not None:
        return backend
    return "dense" if n <= DENSE_MAX_N or not HAVE_CHOLMOD else "cholmod"


class DenseCholesky:
    backend = "dense"

    def __init__(self, A, label=None, overwrite=False):
        if sp.issparse(A):
            A, overwrite = A.toarray(), True
        A = np.asarray(A, dtype=float)
        self.n = A.shape[0]
        try:
            self._L = sla.cholesky(A, lower=True, overwrite_a=overwrite, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NotPositiveDefiniteError(_pd_message(label)) from exc

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self._L))))

    def half_solve(self, B):
        """Return L^{-1} P B."""
        return sla.solve_triangular(self._L, np.asarray(B, dtype=float), lower=True)

    def solve(self, B):
        return sla.cho_solve((self._L, True), np.asarray(B, dtype=float))

    def correlate(self, Z):
        """Return P^T L Z, a draw with covariance A when Z is standard normal."""
        return self._L @ Z


class CholmodCholesky:
    backend = "cholmod"

    def __init__(self, A, label=None):
        A = sp.csc_matrix(A)
        self.n = A.shape[0]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                self._F = _cholmod(A, mode="supernodal")
        except CholmodNotPositiveDefiniteError as exc:
            raise NotPositiveDefiniteError(_pd_message(label)) from exc
        d = self._F.D()
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise NotPositiveDefiniteError(_pd_message(label))

    def logdet(self):
        return float(self._F.logdet())

    def half_solve(self, B):
        B = np.asarray(B, dtype=float)
        return self._F.solve_L(self._F.apply_P(B), use_LDLt_decomposition=False)

    def solve(self, B):
        return self._F(np.asarray(B, dtype=float))

    def correlate(self, Z):
        return self._F.apply_Pt(self._F.L() @ Z)


def _pd_message(label):
    what = f" ({label})" if label else ""
    return f"matrix is not positive definite{what}"


def factorize(A, backend=None, label=None, overwrite=False):
    """Factorize a symmetric positive-definite matrix.

    For the CHOLMOD backend only the lower triangle of ``A`` is read, so a
    lower-triangular CSC matrix is a valid (and cheaper) input.  The dense
    backend needs the full symmetric matrix; ``overwrite`` lets it reuse a
    dense input's memory.  Without an explicit backend the choice follows
    ``resolve_backend``.

    Raises
    ------
    NotPositiveDefiniteError
        If the factorization breaks down. ``label`` is included in the
        message so callers can name the offending covariance spec.
    """
    backend = resolve_backend(A.shape[0], backend)
    if A.shape[0] == 0:
        return DenseCholesky(np.zeros((0, 0)), label)
    if backend == "cholmod":
        if not HAVE_CHOLMOD:
            raise RuntimeError("CHOLMOD backend requested but scikit-sparse is not installed")
        if not sp.issparse(A):
            A = sp.csc_matrix(A)
        return CholmodCholesky(A, label)
    if backend == "dense":
        return DenseCholesky(A, label, overwrite)
    raise ValueError(f"unknown Cholesky backend {backend!r}")


def chol_dense(A, label=None):
    """Lower Cholesky factor of a small dense SPD matrix."""
    try:
        return sla.cholesky(np.asarray(A, dtype=float), lower=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefiniteError(_pd_message(label)) from exc


def logdet_chol(L):
    return 2.0 * float(np.sum(np.log(np.diag(L))))
