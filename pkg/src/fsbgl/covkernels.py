"""Compactly supported covariance families and assembly of the sparse
small-scale covariance matrix ``D``.

Families
--------
``tapered_matern``   sigma2 * Matern(d; range, nu) * Wendland(d; taper)
``gaspari_cohn``     sigma2 * normalized self-convolution of a piecewise-linear
                     generator (shape a = -0.1), support 2c
``wendland_mixture`` sum_i alpha_i * Wendland(d; theta_i), one or two terms
``nugget``           no spatial term, ``D = tau2 * I``

Distances are planar Euclidean, chordal (``2 sin(angle / 2)``) or great-circle
(the angle in radians).  Spherical locations are lon/lat in degrees.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree
from scipy.special import gammaln, kve

from .errors import ParameterDomainError

GC_SHAPE = -0.1
SPARSITY_DROP = 1e-14
METRICS = ("euclidean", "chordal", "great_circle")

FAMILY_PARAMS = {
    "tapered_matern": ("sigma2", "range", "nu", "taper"),
    "gaspari_cohn": ("sigma2", "c"),
    "wendland_mixture": ("alpha1", "theta1", "alpha2", "theta2"),
    "nugget": (),
}


def _positive(**kw):
    for name, v in kw.items():
        if not np.isfinite(v) or v <= 0:
            raise ParameterDomainError(f"{name} must be finite and positive, got {v!r}")


def _lags(d):
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or np.any(np.isnan(d)):
        raise ParameterDomainError("distances must be nonnegative")
    return d


def _out(values, like):
    return float(values) if np.ndim(like) == 0 else values


def matern(d, r, nu):
    """Matern correlation 2^(1-nu)/Gamma(nu) (d/r)^nu K_nu(d/r), equal to 1 at 0.

    Evaluated in log space with the exponentially scaled Bessel function so
    large lags underflow cleanly to 0 instead of producing NaN.
    """
    _positive(range=r, nu=nu)
    d = _lags(d)
    x = np.atleast_1d(d / r)
    out = np.ones_like(x)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        with np.errstate(divide="ignore", over="ignore", under="ignore", invalid="ignore"):
            logv = ((1.0 - nu) * np.log(2.0) - gammaln(nu) + nu * np.log(xp)
                    + np.log(kve(nu, xp)) - xp)
            v = np.exp(logv)
        # kve overflows only for x so small that the correlation is 1 to
        # working precision
        v[np.isposinf(logv) | np.isnan(logv)] = 1.0
        out[pos] = np.minimum(v, 1.0)
    return _out(out.reshape(np.shape(d)), d)


def wendland(d, theta):
    """Wendland function (1/3)(1 - d/theta)_+^6 (35 (d/theta)^2 + 18 d/theta + 3)."""
    _positive(theta=theta)
    d = _lags(d)
    x = d / theta
    base = np.clip(1.0 - x, 0.0, None)
    v = base**6 * (35.0 * x * x + 18.0 * x + 3.0) / 3.0
    return _out(np.where(x >= 1.0, 0.0, v), d)


# Normalized R^3 self-convolution of B0(.|a=-0.1, c=1); see
# scripts/derive_gaspari_cohn.py.  Each row: (lo, hi, coefficient of 1/x,
# polynomial coefficients in increasing powers of x).
_GC_PIECES = (
    (0.0, 0.5, 0.0, (1.0, 0.0, -640 / 69, 185 / 23, 244 / 23, -258 / 23)),
    (0.5, 1.0, -61 / 92, (313 / 46, -435 / 23, 1100 / 69, 125 / 23, -308 / 23, 110 / 23)),
    (1.0, 1.5, 665 / 276, (-503 / 46, 365 / 23, -500 / 69, -55 / 23, 68 / 23, -2 / 3)),
    (1.5, 2.0, -16 / 69, (32 / 23, -40 / 23, 40 / 69, 5 / 23, -4 / 23, 2 / 69)),
)


def gc_generator(d, c, a=GC_SHAPE):
    """Piecewise-linear generator B0(d | a, c) whose self-convolution is the
    Gaspari-Cohn correlation."""
    d = np.abs(np.asarray(d, dtype=float))
    inner = 2.0 * (a - 1.0) * d / c + 1.0
    outer = 2.0 * a * (1.0 - d / c)
    return _out(np.where(d < c / 2, inner, np.where(d <= c, outer, 0.0)), d)


def gaspari_cohn(d, c):
    """Gaspari-Cohn correlation with a = -0.1: the self-convolution of the
    radial generator in R^3, scaled to 1 at the origin. Zero for d >= 2c and
    negative at intermediate lags."""
    _positive(c=c)
    d = _lags(d)
    x = np.atleast_1d(d / c)
    out = np.zeros_like(x)
    for lo, hi, inv_coef, poly in _GC_PIECES:
        sel = (x >= lo) & (x < hi)
        if not np.any(sel):
            continue
        xs = x[sel]
        v = np.polynomial.polynomial.polyval(xs, poly)
        if inv_coef:
            v = v + inv_coef / xs
        out[sel] = v
    return _out(out.reshape(np.shape(d)), d)


def tapered_matern(d, sigma2, r, nu, theta):
    _positive(sigma2=sigma2)
    return sigma2 * matern(d, r, nu) * wendland(d, theta)


def wendland_mixture(d, components):
    """Sum of alpha_i * wendland(d, theta_i) over one or two (alpha, theta) pairs."""
    components = list(components)
    if not components:
        raise ParameterDomainError("wendland_mixture needs at least one component")
    if len(components) > 2:
        raise ParameterDomainError("wendland_mixture supports one or two components")
    total = 0.0
    for alpha, theta in components:
        _positive(alpha=alpha)
        total = total + alpha * wendland(d, theta)
    return total


@dataclass(frozen=True)
class SmallScaleSpec:
    """Covariance family, its parameters, the nugget variance and the metric."""

    family: str
    params: Mapping[str, float] = field(default_factory=dict)
    nugget: float = 0.0
    metric: str = "euclidean"

    def __post_init__(self):
        if self.family not in FAMILY_PARAMS:
            raise ParameterDomainError(f"unknown covariance family {self.family!r}")
        if self.metric not in METRICS:
            raise ParameterDomainError(f"unknown metric {self.metric!r}")
        params = {k: float(v) for k, v in dict(self.params).items()}
        allowed = FAMILY_PARAMS[self.family]
        if self.family == "wendland_mixture":
            need = allowed[:4] if "alpha2" in params or "theta2" in params else allowed[:2]
        else:
            need = allowed
        if set(params) != set(need):
            raise ParameterDomainError(
                f"{self.family} expects parameters {need}, got {tuple(params)}")
        for k in need:
            _positive(**{k: params[k]})
        if not np.isfinite(self.nugget) or self.nugget < 0:
            raise ParameterDomainError(f"nugget must be nonnegative, got {self.nugget!r}")
        object.__setattr__(self, "params", {k: params[k] for k in need})
        object.__setattr__(self, "nugget", float(self.nugget))

    @property
    def param_names(self):
        return tuple(self.params)

    @property
    def n_params(self):
        """Number of covariance parameters including the nugget."""
        return len(self.params) + 1

    @property
    def components(self):
        k = len(self.params) // 2
        return [(self.params[f"alpha{i}"], self.params[f"theta{i}"]) for i in range(1, k + 1)]

    @property
    def support_radius(self):
        p = self.params
        if self.family == "tapered_matern":
            return p["taper"]
        if self.family == "gaspari_cohn":
            return 2.0 * p["c"]
        if self.family == "wendland_mixture":
            return max(t for _, t in self.components)
        return 0.0

    @property
    def variance(self):
        """C2(0), the small-scale variance without the nugget."""
        if self.family in ("tapered_matern", "gaspari_cohn"):
            return self.params["sigma2"]
        if self.family == "wendland_mixture":
            return sum(a for a, _ in self.components)
        return 0.0

    def covariance(self, d):
        """Small-scale covariance C2(d); the nugget is not included."""
        p = self.params
        if self.family == "tapered_matern":
            return tapered_matern(d, p["sigma2"], p["range"], p["nu"], p["taper"])
        if self.family == "gaspari_cohn":
            return p["sigma2"] * gaspari_cohn(d, p["c"])
        if self.family == "wendland_mixture":
            return wendland_mixture(d, self.components)
        d = _lags(d)
        return _out(np.zeros_like(d), d)

    def replace(self, nugget=None, metric=None, **params):
        new = dict(self.params)
        new.update(params)
        return SmallScaleSpec(self.family, new,
                              self.nugget if nugget is None else nugget,
                              self.metric if metric is None else metric)

    def to_dict(self):
        return {"family": self.family, "params": dict(self.params),
                "nugget": self.nugget, "metric": self.metric}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], d.get("params", {}), d.get("nugget", 0.0),
                   d.get("metric", "euclidean"))

    def __str__(self):
        ps = ", ".join(f"{k}={v:.6g}" for k, v in self.params.items())
        sep = ", " if ps else ""
        return f"{self.family}({ps}{sep}nugget={self.nugget:.6g}, metric={self.metric})"


# ---------------------------------------------------------------- distances

def embed(locations, metric):
    """Map locations to points whose Euclidean distance is planar or chordal."""
    X = np.asarray(locations, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if metric == "euclidean":
        return X
    if metric not in METRICS:
        raise ParameterDomainError(f"unknown metric {metric!r}")
    lon, lat = np.deg2rad(X[:, 0]), np.deg2rad(X[:, 1])
    return np.column_stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])


def chord_to_distance(chord, metric):
    if metric == "great_circle":
        return 2.0 * np.arcsin(np.clip(np.asarray(chord) / 2.0, 0.0, 1.0))
    return np.asarray(chord, dtype=float)


def distance_to_chord(radius, metric):
    """Search radius in embedded (chord) units for a radius in metric units."""
    if metric == "great_circle":
        return 2.0 * np.sin(min(radius, np.pi) / 2.0)
    return radius


def pairwise_distances(A, B, metric="euclidean"):
    """Dense distance matrix between two location sets."""
    from scipy.spatial.distance import cdist
    return chord_to_distance(cdist(embed(A, metric), embed(B, metric)), metric)


@dataclass(frozen=True, eq=False)
class NeighborPairs:
    """All location pairs (i < j) closer than ``radius``, sorted by distance.

    Reusable across covariance specs whose support does not exceed
    ``radius``; kernels are evaluated once per distinct lag.
    """

    n: int
    metric: str
    radius: float
    rows: np.ndarray
    cols: np.ndarray
    dist: np.ndarray

    @classmethod
    def build(cls, locations, metric="euclidean", radius=0.0):
        P = embed(locations, metric)
        n = P.shape[0]
        tree = cKDTree(P)
        if len(tree.query_pairs(0.0, output_type="ndarray")):
            raise ParameterDomainError("duplicate locations make D ill-conditioned")
        if radius > 0:
            ij = tree.query_pairs(distance_to_chord(radius, metric), output_type="ndarray")
        else:
            ij = np.zeros((0, 2), dtype=np.intp)
        i, j = ij[:, 0], ij[:, 1]
        d = chord_to_distance(np.linalg.norm(P[i] - P[j], axis=1), metric)
        order = np.argsort(d, kind="stable")
        return cls(n, metric, float(radius), i[order], j[order], d[order])

    @cached_property
    def _unique(self):
        return np.unique(self.dist, return_inverse=True)

    def values(self, spec):
        """Covariance at every pair closer than the spec's support radius.

        Returns ``(rows, cols, values)``.
        """
        support = spec.support_radius
        if support > self.radius * (1 + 1e-12):
            raise ParameterDomainError(
                f"support {support} exceeds the neighbor radius {self.radius}")
        k = int(np.searchsorted(self.dist, support, side="left"))
        if k == 0:
            return self.rows[:0], self.cols[:0], np.zeros(0)
        uniq, inverse = self._unique
        ku = int(np.searchsorted(uniq, support, side="left"))
        vals = np.asarray(spec.covariance(uniq[:ku]))[inverse[:k]]
        return self.rows[:k], self.cols[:k], vals


class LagTable:
    """All pairwise lags of a location set, for repeated dense assembly of D.

    Kernels are evaluated once per distinct lag and gathered, which is cheap
    on gridded data where few distinct lags occur.
    """

    def __init__(self, locations, metric="euclidean"):
        X = np.atleast_2d(np.asarray(locations, dtype=float))
        d = pairwise_distances(X, X, metric)
        self.n = X.shape[0]
        self.metric = metric
        self.lags, inverse = np.unique(d, return_inverse=True)
        dtype = np.int32 if len(self.lags) < 2**31 else np.int64
        self.index = inverse.reshape(d.shape).astype(dtype)
        off = ~np.eye(self.n, dtype=bool)
        if np.any(self.lags[self.index[off]] == 0):
            raise ParameterDomainError("duplicate locations make D ill-conditioned")

    def dense_D(self, spec):
        """Dense D with the same entries ``assemble_D`` stores."""
        if spec.metric != self.metric:
            raise ParameterDomainError("lag table was built with a different metric")
        c = np.asarray(spec.covariance(self.lags), dtype=float)
        c[np.abs(c) < SPARSITY_DROP] = 0.0
        D = c[self.index]
        D[np.diag_indices(self.n)] = spec.variance + spec.nugget
        return D


def assemble_D(locations, spec, pairs=None, lower=False, check_pd=False, backend=None):
    """Sparse small-scale covariance D[i, j] = C2(d_ij) + tau2 * 1{i = j}.

    Entries at or beyond the support radius, and entries with magnitude
    below 1e-14, are not stored.  Returns a CSC matrix: full symmetric by
    default, lower triangle only with ``lower=True``.

    Raises
    ------
    ParameterDomainError
        On duplicate locations.
    NotPositiveDefiniteError
        With ``check_pd=True`` when the sparse Cholesky fails.
    """
    if pairs is None:
        pairs = NeighborPairs.build(locations, spec.metric, spec.support_radius)
    elif pairs.metric != spec.metric:
        raise ParameterDomainError("neighbor pairs were built with a different metric")
    n = pairs.n
    r, c, v = pairs.values(spec)
    keep = np.abs(v) >= SPARSITY_DROP
    r, c, v = r[keep], c[keep], v[keep]
    diag = np.full(n, spec.variance + spec.nugget)
    idx = np.arange(n)
    if lower:
        rows = np.concatenate([c, idx])
        cols = np.concatenate([r, idx])
        data = np.concatenate([v, diag])
    else:
        rows = np.concatenate([r, c, idx])
        cols = np.concatenate([c, r, idx])
        data = np.concatenate([v, v, diag])
    D = sp.csc_matrix((data, (rows, cols)), shape=(n, n))
    if check_pd:
        from .cholesky import factorize
        factorize(D, backend=backend, label=str(spec))
    return D


def cross_covariance(obs, targets, spec):
    """Sparse n_obs x n_targets matrix of C2 between two location sets."""
    P = embed(obs, spec.metric)
    T = embed(targets, spec.metric)
    n, t = P.shape[0], T.shape[0]
    support = spec.support_radius
    if support <= 0 or n == 0 or t == 0:
        return sp.csc_matrix((n, t))
    tree = cKDTree(P)
    hits = tree.query_ball_point(T, distance_to_chord(support, spec.metric))
    lengths = np.fromiter((len(h) for h in hits), dtype=np.intp, count=t)
    rows = np.concatenate([np.asarray(h, dtype=np.intp) for h in hits]) if lengths.sum() else \
        np.zeros(0, dtype=np.intp)
    cols = np.repeat(np.arange(t), lengths)
    d = chord_to_distance(np.linalg.norm(P[rows] - T[cols], axis=1), spec.metric)
    inside = d < support
    rows, cols, d = rows[inside], cols[inside], d[inside]
    vals = np.asarray(spec.covariance(d)) if len(d) else np.zeros(0)
    keep = np.abs(vals) >= SPARSITY_DROP
    return sp.csc_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, t))
