"""Outer estimation: small-scale parameters, then Q by difference-of-convex steps.

Stage 1 fixes Q = alpha I and searches the small-scale covariance parameters
and the nugget on a grid, with alpha profiled out exactly.  Stage 2 holds D
fixed and iterates

    Q_{j+1} = argmin_Q  -log det Q + tr(grad_g(Q_j) Q) + lam ||offdiag(Q)||_1

where g(Q) = log det(Q + Gram) - tr(B (Q + Gram)^-1) is the concave part of
the reduced likelihood.  Each step majorizes, so the penalized objective
never increases.  The penalty is chosen by the conditional AIC.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from . import glasso
from .anneal import AnnealConfig, ParamGrid, anneal
from .cholesky import chol_dense, factorize, resolve_backend
from .covkernels import FAMILY_PARAMS, LagTable, NeighborPairs, SmallScaleSpec, assemble_D
from .errors import (FSBGLError, NonConvergenceError, NotPositiveDefiniteError,
                     NumericalDomainError, NumericalError, ParameterDomainError,
                     SearchFailureError)
from .likelihood import center_and_stats, loglik, objective

log = logging.getLogger(__name__)

NUGGET_KEY = "log10_nugget"
HALF_DECADE_LAMBDAS = tuple(10.0 ** k for k in (1.0, 0.5, 0.0, -0.5, -1.0))


def data_lambdas(n=25):
    """Log-spaced penalties from 100 down to 0.002."""
    return tuple(np.logspace(2, np.log10(0.002), n))


# ---------------------------------------------------------------- stage 1

def default_anneal_config(family, n_components=1, **overrides):
    """Search boxes for the unit square; override ``grids`` for other domains."""
    grids = {}
    if family == "tapered_matern":
        grids = {"sigma2": ParamGrid(0.1, 3.0, 59), "range": ParamGrid(0.01, 0.5, 50),
                 "nu": ParamGrid(0.1, 2.0, 96), "taper": ParamGrid(0.05, 0.6, 56)}
    elif family == "gaspari_cohn":
        grids = {"sigma2": ParamGrid(0.1, 3.0, 59), "c": ParamGrid(0.01, 0.3, 30)}
    elif family == "wendland_mixture":
        if n_components not in (1, 2):
            raise ParameterDomainError("Wendland mixtures take 1 or 2 components")
        for i in range(1, n_components + 1):
            grids[f"alpha{i}"] = ParamGrid(0.05, 3.0, 60)
            grids[f"theta{i}"] = ParamGrid(0.02, 0.6, 59)
    elif family != "nugget":
        raise ParameterDomainError(f"unknown covariance family {family!r}")
    grids[NUGGET_KEY] = ParamGrid(-5.0, 0.0, 101)
    settings = {"screen": 30, "min_steps": 120, "max_steps": 200, "polish": False,
                "refine_evals": 700, "refine_exp10": (NUGGET_KEY,)}
    settings.update(overrides)
    return AnnealConfig(grids=grids, **settings)


def spec_from_point(family, point, metric="euclidean"):
    params = {k: v for k, v in point.items() if k != NUGGET_KEY}
    return SmallScaleSpec(family, params, 10.0 ** point[NUGGET_KEY], metric)


def point_from_spec(spec):
    point = dict(spec.params)
    point[NUGGET_KEY] = math.log10(spec.nugget) if spec.nugget > 0 else -math.inf
    return point


def profile_alpha(stats, log10_bounds=(-8.0, 8.0)):
    """Minimize the reduced likelihood over Q = alpha I.

    Uses the eigendecomposition of the Gram matrix, so each trial alpha is
    O(J).  Returns ``(alpha, value)``.
    """
    p = stats.dim
    const = stats.logdet_d + stats.trace_sdinv
    if p == 0:
        return 1.0, const
    g, V = np.linalg.eigh(stats.gram)
    g = np.clip(g, 0.0, None)
    b = np.sum((V.T @ stats.cross) ** 2, axis=1) / stats.m

    def value(t):
        a = 10.0**t
        return float(np.sum(np.log1p(g / a)) - np.sum(b / (a + g))) + const

    lo, hi = log10_bounds
    ts = np.linspace(lo, hi, 161)
    vals = np.array([value(t) for t in ts])
    k = int(np.argmin(vals))
    a, b_ = ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)]
    res = minimize_scalar(value, bounds=(a, b_), method="bounded",
                          options={"xatol": 1e-10})
    t, v = (res.x, res.fun) if res.fun <= vals[k] else (ts[k], vals[k])
    return 10.0**t, float(v)


def small_scale_objective(dataset, psi, spec, backend=None, neighbors=None):
    """Reduced negative log-likelihood at ``spec`` with alpha profiled.

    ``neighbors`` may be a prebuilt ``LagTable`` (dense backend) or
    ``NeighborPairs`` (sparse backend) covering the spec's support.
    Returns ``(value, alpha, stats)``.
    """
    factor = factor_D(dataset.locations, spec, backend, neighbors)
    stats = center_and_stats(dataset, psi, factor=factor)
    alpha, value = profile_alpha(stats)
    return value, alpha, stats


def factor_D(locations, spec, backend=None, neighbors=None):
    backend = resolve_backend(len(locations), backend)
    if backend == "dense":
        D = (neighbors.dense_D(spec) if isinstance(neighbors, LagTable)
             else assemble_D(locations, spec).toarray())
        return factorize(D, "dense", str(spec), overwrite=True)
    pairs = neighbors if isinstance(neighbors, NeighborPairs) else None
    D = assemble_D(locations, spec, pairs=pairs, lower=True)
    return factorize(D, backend, str(spec))


def neighbor_index(locations, metric, radius, backend=None):
    """Precomputed lags for repeated assembly of D along a search."""
    if resolve_backend(len(locations), backend) == "dense":
        return LagTable(locations, metric)
    return NeighborPairs.build(locations, metric, radius)


@dataclass
class DParamFit:
    spec: SmallScaleSpec
    alpha: float
    objective: float
    stats: object
    n_evals: int
    steps: int
    converged: bool
    trace: list = field(default_factory=list)


def fit_d_params(dataset, psi, family, anneal_config=None, metric="euclidean",
                 backend=None, n_components=1):
    """Stage 1: anneal the small-scale parameters with Q = alpha I.

    The annealer works on (m/2) L so its temperature is in log-likelihood
    units.  Infeasible candidates (Cholesky failure) are rejected.

    Raises
    ------
    SearchFailureError
        If no feasible grid point is found.
    """
    if dataset.m < 2:
        raise ParameterDomainError("need at least two replicates")
    if family not in FAMILY_PARAMS:
        raise ParameterDomainError(f"unknown covariance family {family!r}")
    cfg = anneal_config or default_anneal_config(family, n_components)
    psi = np.asarray(psi, dtype=float)
    neighbors = neighbor_index(dataset.locations, metric, _max_support(family, cfg.grids),
                               backend)
    half_m = 0.5 * dataset.m
    last_ok = {}

    def f(point):
        spec = spec_from_point(family, point, metric)
        value, _, _ = small_scale_objective(dataset, psi, spec, backend, neighbors)
        if not math.isfinite(value):
            raise NumericalDomainError("non-finite likelihood")
        last_ok["point"] = point
        return half_m * value

    try:
        res = anneal(f, cfg)
    except SearchFailureError as exc:
        raise SearchFailureError(str(exc), last_ok.get("point")) from exc
    spec = spec_from_point(family, res.point, metric)
    value, alpha, stats = small_scale_objective(dataset, psi, spec, backend, neighbors)
    log.info("stage 1: %s alpha=%.4g L=%.6g (%d evaluations)", spec, alpha, value, res.n_evals)
    return DParamFit(spec, alpha, value, stats, res.n_evals, res.steps, res.converged,
                     [t / half_m for t in res.trace])


def _max_support(family, grids):
    hi = {k: g.values()[-1] for k, g in grids.items()}
    if family == "tapered_matern":
        return hi["taper"]
    if family == "gaspari_cohn":
        return 2.0 * hi["c"]
    if family == "wendland_mixture":
        return max(v for k, v in hi.items() if k.startswith("theta"))
    return 0.0


# ---------------------------------------------------------------- stage 2

def _inverse_chol(A, label):
    try:
        L = chol_dense(A, label)
    except NotPositiveDefiniteError as exc:
        raise NumericalDomainError(str(exc)) from exc
    M = sla.cho_solve((L, True), np.eye(A.shape[0]))
    return 0.5 * (M + M.T)


def dc_gradient(Q, stats):
    """Gradient of g(Q) = log det(Q + Gram) - tr(B (Q + Gram)^-1).

    Equals M + M B M with M = (Q + Gram)^-1; formed as M + R R' / m with
    R = M cross so the result is exactly symmetric.
    """
    M = _inverse_chol(np.asarray(Q, dtype=float) + stats.gram, "Q + Gram")
    R = M @ stats.cross
    G = M + R @ R.T / stats.m
    return 0.5 * (G + G.T)


def concave_part(Q, stats):
    """g(Q), the function ``dc_gradient`` differentiates."""
    A = np.asarray(Q, dtype=float) + stats.gram
    try:
        L = chol_dense(A, "Q + Gram")
    except NotPositiveDefiniteError as exc:
        raise NumericalDomainError(str(exc)) from exc
    R = sla.solve_triangular(L, stats.cross, lower=True)
    return 2.0 * float(np.sum(np.log(np.diag(L)))) - float(np.sum(R * R)) / stats.m


@dataclass
class FitDiagnostics:
    objective_trace: list = field(default_factory=list)
    relative_changes: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    kkt_residuals: list = field(default_factory=list)
    converged: bool = False
    hat_trace: float = math.nan
    df_e: float = math.nan
    caic: float = math.nan
    loglik: float = math.nan

    @property
    def outer_iterations(self):
        return len(self.relative_changes)

    def is_monotone(self, rtol=1e-9):
        t = self.objective_trace
        return all(b <= a + rtol * abs(a) for a, b in zip(t, t[1:]))

    def rows(self):
        """(iteration, objective, relative change) per outer iteration."""
        changes = [math.nan] + list(self.relative_changes)
        return [(i, v, c) for i, (v, c) in enumerate(zip(self.objective_trace, changes))]


def fit_Q(stats, lam, delta=0.02, Q0=None, tol=1e-6, max_outer=200, max_inner=500):
    """Stage 2: difference-of-convex iterations for Q at penalty ``lam``.

    Starts from ``Q0`` or, by default, alpha I with alpha profiled.  Stops
    when ||Q_{j+1} - Q_j||_F / ||Q_j||_F < delta.

    Raises
    ------
    NonConvergenceError, InfeasibleProblemError
        From the inner solver, with the outer iteration index in the message.
    """
    if not lam >= 0:
        raise ParameterDomainError("lam must be nonnegative")
    p = stats.dim
    if Q0 is None:
        Q = profile_alpha(stats)[0] * np.eye(p)
    else:
        Q = np.array(Q0, dtype=float)
    diag = FitDiagnostics()
    diag.objective_trace.append(objective(Q, stats, lam).total)
    for j in range(max_outer):
        G = dc_gradient(Q, stats)
        try:
            sol = glasso.solve(glasso.GlassoProblem(G, lam), warm_start=Q, tol=tol,
                               max_iter=max_inner)
        except NonConvergenceError as exc:
            raise NonConvergenceError(f"outer iteration {j}: {exc}", best=exc.best) from exc
        except NumericalError as exc:
            raise type(exc)(f"outer iteration {j}: {exc}") from exc
        Qn = sol.Q
        change = float(np.linalg.norm(Qn - Q) / np.linalg.norm(Q))
        Q = Qn
        diag.relative_changes.append(change)
        diag.inner_iterations.append(sol.iterations)
        diag.kkt_residuals.append(sol.kkt_residual)
        diag.objective_trace.append(objective(Q, stats, lam).total)
        if change < delta:
            diag.converged = True
            break
    else:
        log.warning("lam=%g: no convergence in %d outer iterations", lam, max_outer)
    if not diag.is_monotone():
        log.warning("lam=%g: penalized objective increased across outer iterations", lam)
    return Q, diag


@dataclass(frozen=True)
class CAIC:
    value: float
    df_e: float
    hat_trace: float
    loglik: float


def hat_trace(Q, stats):
    """tr(Psi (Gram + Q)^-1 Psi' D^-1) = tr((Gram + Q)^-1 Gram)."""
    A = np.asarray(Q, dtype=float) + stats.gram
    try:
        L = chol_dense(A, "Q + Gram")
    except NotPositiveDefiniteError as exc:
        raise NumericalDomainError(str(exc)) from exc
    return float(np.trace(sla.cho_solve((L, True), stats.gram)))


def caic(Q, spec, stats):
    """Conditional AIC, -2 loglik + 2 (hat trace + number of covariance params)."""
    h = hat_trace(Q, stats)
    ll = loglik(Q, stats)
    df = h + (spec.n_params if spec is not None else 0)
    return CAIC(-2.0 * ll + 2.0 * df, df, h, ll)


def flattening_point(lams, caics, rel_per_decade=1e-4):
    """Index of the first penalty where cAIC stops changing.

    ``lams`` run from large to small.  Once cAIC has started to move, returns
    the first k whose relative change to k+1, per decade of lambda, falls
    below ``rel_per_decade``.  A leading plateau (large penalties that all
    give a diagonal Q) does not count.  Falls back to the arg-min of cAIC.
    """
    lams = np.asarray(lams, dtype=float)
    caics = np.asarray(caics, dtype=float)
    if len(lams) == 0:
        raise ParameterDomainError("empty lambda sequence")
    moving = False
    for k in range(len(lams) - 1):
        decades = abs(math.log10(lams[k]) - math.log10(lams[k + 1]))
        if decades == 0 or caics[k] == 0:
            continue
        rate = abs(caics[k + 1] - caics[k]) / abs(caics[k]) / decades
        if rate >= rel_per_decade:
            moving = True
        elif moving:
            return k
    return int(np.nanargmin(caics))


@dataclass
class FittedModel:
    Q: np.ndarray
    spec: SmallScaleSpec
    lam: float
    diagnostics: FitDiagnostics
    basis: object = None
    mean: np.ndarray | None = None
    mean_locations: np.ndarray | None = None
    alpha: float = math.nan


@dataclass
class LambdaPath:
    lams: list
    models: list
    errors: dict
    index: int

    @property
    def lam_star(self):
        return self.lams[self.index]

    @property
    def best(self):
        return self.models[self.index]

    def fitted(self):
        return [(lam, m) for lam, m in zip(self.lams, self.models) if m is not None]


def select_lambda(dataset, psi, spec, lam_grid, stats=None, backend=None, delta=0.02,
                  tol=1e-6, Q0=None, warm=True, basis=None, rel_per_decade=1e-4):
    """Fit Q along a descending penalty grid and pick lambda by cAIC flattening.

    Each fit starts from the previous solution when ``warm``.  A failed grid
    point is recorded in ``errors`` and skipped.
    """
    lams = [float(v) for v in lam_grid]
    if not lams:
        raise ParameterDomainError("empty lambda grid")
    if any(b > a for a, b in zip(lams, lams[1:])):
        raise ParameterDomainError("lambda grid must be sorted in descending order")
    if stats is None:
        stats = center_and_stats(dataset, psi, factor=factor_D(dataset.locations, spec, backend))
    alpha = profile_alpha(stats)[0]
    start = alpha * np.eye(stats.dim) if Q0 is None else Q0
    mean = dataset.empirical_mean()
    models, errors = [], {}
    prev = start
    for i, lam in enumerate(lams):
        try:
            Q, diag = fit_Q(stats, lam, delta=delta, Q0=prev if warm else start, tol=tol)
            c = caic(Q, spec, stats)
            diag.hat_trace, diag.df_e, diag.caic, diag.loglik = c.hat_trace, c.df_e, c.value, c.loglik
        except FSBGLError as exc:
            log.warning("lam=%g failed: %s", lam, exc)
            errors[i] = exc
            models.append(None)
            continue
        models.append(FittedModel(Q, spec, lam, diag, basis, mean, dataset.locations, alpha))
        prev = Q
    ok = [i for i, m in enumerate(models) if m is not None]
    if not ok:
        raise next(iter(errors.values()))
    k = flattening_point([lams[i] for i in ok], [models[i].diagnostics.caic for i in ok],
                         rel_per_decade)
    return LambdaPath(lams, models, errors, ok[k])


@dataclass
class FitResult:
    stage1: DParamFit
    path: LambdaPath

    @property
    def model(self):
        return self.path.best


def fit_model(dataset, basis, family, lam_grid=HALF_DECADE_LAMBDAS, anneal_config=None,
              metric="euclidean", backend=None, n_components=1, delta=0.02, tol=1e-6):
    """Both stages: small-scale parameters, then the penalty path for Q."""
    psi = np.asarray(basis.evaluate(dataset.locations), dtype=float)
    stage1 = fit_d_params(dataset, psi, family, anneal_config, metric, backend, n_components)
    path = select_lambda(dataset, psi, stage1.spec, sorted(lam_grid, reverse=True),
                         stats=stage1.stats, backend=backend, delta=delta, tol=tol,
                         basis=basis)
    return FitResult(stage1, path)
