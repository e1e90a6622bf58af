"""Kriging prediction under a fitted model, and CRPS/RMSE scoring.

With L the Cholesky factor of D, W = L^-1 Psi and A = Q + W'W, every
quadratic form in Sigma^-1 = (Psi Q^-1 Psi' + D)^-1 reduces to half solves
against L plus one (J+1)-sized factor of A.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator, RegularGridInterpolator
from scipy.spatial import cKDTree
from scipy.stats import norm

from .cholesky import chol_dense
from .covkernels import cross_covariance, embed
from .dcfit import factor_D
from .errors import NotPositiveDefiniteError, NumericalDomainError, ParameterDomainError

INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


@dataclass(frozen=True)
class PredictiveDistribution:
    mean: float
    variance: float
    location: tuple = ()

    def __post_init__(self):
        if not self.variance > 0:
            raise ParameterDomainError(f"predictive variance must be positive, got {self.variance}")

    @property
    def sd(self):
        return math.sqrt(self.variance)


@dataclass
class Prediction:
    """Predictive means (T x m, one column per replicate) and variances (T,)."""

    targets: np.ndarray
    mean: np.ndarray
    variance: np.ndarray

    def distributions(self, replicate=0):
        return [PredictiveDistribution(float(mu), float(v), tuple(map(float, x)))
                for mu, v, x in zip(self.mean[:, replicate], self.variance, self.targets)]


def interpolate_mean(locations, values, targets):
    """Bilinear interpolation of a mean surface; exact at its own sites.

    Uses a tensor-grid interpolator when the sites form a full grid,
    piecewise-linear on a triangulation otherwise, and the nearest site
    outside the convex hull.
    """
    X = np.asarray(locations, dtype=float)
    v = np.asarray(values, dtype=float)
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    if len(X) == 0:
        raise ParameterDomainError("no mean locations")
    gx, gy = np.unique(X[:, 0]), np.unique(X[:, 1])
    if len(gx) * len(gy) == len(X) and len(gx) > 1 and len(gy) > 1:
        grid = np.full((len(gx), len(gy)), np.nan)
        grid[np.searchsorted(gx, X[:, 0]), np.searchsorted(gy, X[:, 1])] = v
        interp = RegularGridInterpolator((gx, gy), grid, bounds_error=False, fill_value=None)
        Tc = np.column_stack([np.clip(T[:, 0], gx[0], gx[-1]), np.clip(T[:, 1], gy[0], gy[-1])])
        return interp(Tc)
    if len(X) >= 3:
        try:
            out = LinearNDInterpolator(X, v)(T)
        except Exception:  # degenerate (collinear) sites
            out = np.full(len(T), np.nan)
    else:
        out = np.full(len(T), np.nan)
    miss = np.isnan(out)
    if miss.any():
        out[miss] = NearestNDInterpolator(X, v)(T[miss])
    return out


def predict(model, observed, targets, chunk=1000, backend=None):
    """Gaussian conditional of Y at each target given the observed replicates.

    The cross-covariance uses the basis and the small-scale kernel; the
    nugget enters the predictive variance only.

    Raises
    ------
    ParameterDomainError
        If a target coincides with an observed site while the nugget is 0.
    NumericalDomainError
        If a factorization fails or a predictive variance is not positive.
    """
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    if T.size == 0:
        raise ParameterDomainError("no target locations")
    spec = model.spec
    X = observed.locations
    if spec.nugget <= 0:
        tree = cKDTree(embed(X, spec.metric))
        d, _ = tree.query(embed(T, spec.metric))
        hits = np.flatnonzero(d == 0)
        if len(hits):
            raise ParameterDomainError(
                f"target {hits[0]} coincides with an observed site and the nugget is 0")
    psi_o = _basis(model, X)
    psi_t = _basis(model, T)
    p = psi_o.shape[1]
    try:
        factor = factor_D(X, spec, backend)
    except NotPositiveDefiniteError as exc:
        raise NumericalDomainError(str(exc)) from exc
    WV = factor.half_solve(np.hstack([psi_o, observed.centered()]))
    W, V = WV[:, :p], WV[:, p:]
    Q = np.asarray(model.Q, dtype=float)
    try:
        La = chol_dense(Q + W.T @ W, "Q + Psi' D^-1 Psi")
        Lq = chol_dense(Q, "Q")
    except NotPositiveDefiniteError as exc:
        raise NumericalDomainError(str(exc)) from exc
    WtV = sla.solve_triangular(La, W.T @ V, lower=True)
    mu_t = interpolate_mean(X, observed.empirical_mean(), T)

    means = np.empty((len(T), observed.m))
    var = np.empty(len(T))
    for s in range(0, len(T), chunk):
        sl = slice(s, min(s + chunk, len(T)))
        K = sla.solve_triangular(Lq, psi_t[sl].T, lower=True)      # Lq^-1 Psi_t'
        G = sla.solve_triangular(Lq, psi_o.T, lower=True)          # Lq^-1 Psi_o'
        cov_ot = G.T @ K + cross_covariance(X, T[sl], spec).toarray()
        H = factor.half_solve(cov_ot)
        R = sla.solve_triangular(La, W.T @ H, lower=True)
        means[sl] = mu_t[sl, None] + H.T @ V - R.T @ WtV
        prior = np.sum(K * K, axis=0) + spec.variance + spec.nugget
        var[sl] = prior - np.sum(H * H, axis=0) + np.sum(R * R, axis=0)
    bad = np.flatnonzero(~(var > 0))
    if len(bad):
        raise NumericalDomainError(
            f"non-positive predictive variance {var[bad[0]]:.3g} at target {bad[0]} ({T[bad[0]]})")
    return Prediction(T, means, var)


def _basis(model, locations):
    if model.basis is None:
        return np.zeros((len(locations), model.Q.shape[0]))
    return np.asarray(model.basis.evaluate(locations), dtype=float)


def crps_gaussian(mu, sigma, y):
    """Closed-form CRPS of N(mu, sigma^2) at y (vectorized)."""
    mu, sigma, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu, sigma, y)))
    if np.any(~(sigma > 0)):
        raise ParameterDomainError("sigma must be positive")
    z = (y - mu) / sigma
    out = sigma * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - INV_SQRT_PI)
    return out if out.ndim else float(out)


def crps(dist, y):
    return crps_gaussian(dist.mean, dist.sd, y)


@dataclass(frozen=True)
class Score:
    mean_crps: float
    median_crps: float
    rmse: float
    n: int


def score(predictions, truths):
    """Mean and median CRPS and RMSE of predictive means.

    ``predictions`` is a sequence of PredictiveDistribution or a Prediction;
    for the latter ``truths`` is T x m (or T for a single replicate).
    """
    if isinstance(predictions, Prediction):
        y = np.asarray(truths, dtype=float).reshape(predictions.mean.shape)
        mu = predictions.mean
        sd = np.broadcast_to(np.sqrt(predictions.variance)[:, None], mu.shape)
    else:
        mu = np.array([d.mean for d in predictions], dtype=float)
        sd = np.array([d.sd for d in predictions], dtype=float)
        y = np.asarray(truths, dtype=float).ravel()
        if len(y) != len(mu):
            raise ParameterDomainError("predictions and truths differ in length")
    if mu.size == 0:
        raise ParameterDomainError("nothing to score")
    c = np.atleast_1d(crps_gaussian(mu, sd, y)).ravel()
    rmse = math.sqrt(float(np.mean((np.ravel(mu) - np.ravel(y)) ** 2)))
    return Score(float(np.mean(c)), float(np.median(c)), rmse, int(c.size))


def write_predictions(path, prediction, truths=None):
    """One row per (target, replicate): coordinates, mean, variance, truth, CRPS."""
    from .io import atomic_open
    T, m = prediction.mean.shape
    y = None if truths is None else np.asarray(truths, dtype=float).reshape(T, m)
    sd = np.sqrt(prediction.variance)
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "replicate", "mean", "variance", "truth", "crps"])
        for t in range(T):
            for r in range(m):
                row = [repr(float(prediction.targets[t, 0])), repr(float(prediction.targets[t, 1])),
                       r, repr(float(prediction.mean[t, r])), repr(float(prediction.variance[t]))]
                if y is None:
                    row += ["", ""]
                else:
                    row += [repr(float(y[t, r])),
                            repr(crps_gaussian(prediction.mean[t, r], sd[t], y[t, r]))]
                w.writerow(row)


def read_predictions(path):
    """Returns (mu, sigma, truth) arrays from a predictions CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    mu = np.array([float(r["mean"]) for r in rows])
    sd = np.sqrt(np.array([float(r["variance"]) for r in rows]))
    y = np.array([float(r["truth"]) if r["truth"] != "" else math.nan for r in rows])
    return mu, sd, y


def score_arrays(mu, sd, y):
    """``score`` on flat arrays (as read back from a predictions CSV)."""
    dists = [PredictiveDistribution(float(a), float(b) ** 2) for a, b in zip(mu, sd)]
    return score(dists, y)
