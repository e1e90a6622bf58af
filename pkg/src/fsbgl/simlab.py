"""Synthetic fields from known models and recovery metrics."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .basis import BasisSpec, regular_grid
from .cholesky import chol_dense, factorize
from .covkernels import SmallScaleSpec, assemble_D
from .dcfit import (HALF_DECADE_LAMBDAS, default_anneal_config, factor_D, fit_d_params,
                    select_lambda)
from .errors import FSBGLError, NotPositiveDefiniteError, ParameterDomainError
from .likelihood import SpatialDataset, center_and_stats, negloglik_reduced
from .predictor import predict, score

log = logging.getLogger(__name__)

GRAPH_KINDS = ("block_diagonal", "hub_and_spoke", "random_graph", "identity")
EDGE_VALUES = {"block_diagonal": -0.4, "hub_and_spoke": -0.3, "random_graph": -0.25,
               "identity": 0.0}
ZERO_THRESHOLD = 1e-10


@dataclass(frozen=True)
class PrecisionGraphSpec:
    """Pattern and values of a coefficient precision matrix.

    Off-diagonal entries on the pattern get ``value`` (a per-kind default
    when ``None``); the diagonal starts
    at ``diagonal``.  If that matrix is not positive definite the diagonal
    is raised by (1 + ``loading``) times the magnitude of its Gershgorin
    lower eigenvalue bound.
    """

    kind: str = "block_diagonal"
    dim: int = 121
    value: float | None = None
    diagonal: float = 1.0
    block_size: int = 11
    hubs: int = 11
    spokes: int = 10
    edge_prob: float = 0.04
    seed: int = 0
    loading: float = 0.1

    def __post_init__(self):
        if self.kind not in GRAPH_KINDS:
            raise ParameterDomainError(f"unknown graph kind {self.kind!r}")
        if self.value is None:
            object.__setattr__(self, "value", EDGE_VALUES[self.kind])
        if self.dim < 1 or self.diagonal <= 0 or self.loading <= 0:
            raise ParameterDomainError("dim, diagonal and loading must be positive")
        if self.kind == "block_diagonal" and not 1 <= self.block_size <= self.dim:
            raise ParameterDomainError("block size must lie in [1, dim]")
        if self.kind == "hub_and_spoke" and self.hubs * (self.spokes + 1) > self.dim:
            raise ParameterDomainError(
                f"{self.hubs} hubs with {self.spokes} spokes need more than {self.dim} nodes")
        if self.kind == "random_graph" and not 0 <= self.edge_prob <= 1:
            raise ParameterDomainError("edge probability must lie in [0, 1]")

    def to_dict(self):
        return asdict(self)


def graph_edges(spec):
    """Upper-triangle (i, j) index arrays of the pattern."""
    p = spec.dim
    if spec.kind == "identity":
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    if spec.kind == "block_diagonal":
        i, j = np.triu_indices(p, 1)
        same = (i // spec.block_size) == (j // spec.block_size)
        return i[same], j[same]
    if spec.kind == "hub_and_spoke":
        rows, cols = [], []
        for h in range(spec.hubs):
            hub = h * (spec.spokes + 1)
            for s in range(1, spec.spokes + 1):
                rows.append(hub)
                cols.append(hub + s)
        return np.array(rows, dtype=int), np.array(cols, dtype=int)
    rng = np.random.default_rng(spec.seed)
    i, j = np.triu_indices(p, 1)
    keep = rng.random(len(i)) < spec.edge_prob
    return i[keep], j[keep]


def make_precision(spec):
    """Dense positive-definite Q with the requested pattern."""
    p = spec.dim
    Q = np.eye(p) * spec.diagonal
    i, j = graph_edges(spec)
    Q[i, j] = Q[j, i] = spec.value
    try:
        chol_dense(Q)
    except NotPositiveDefiniteError:
        off = np.abs(Q).sum(axis=1) - np.abs(np.diag(Q))
        bound = float(np.min(np.diag(Q) - off))
        Q[np.diag_indices(p)] += (1.0 + spec.loading) * abs(bound)
    return Q


def simulate_fields(Q, psi, locations, spec, m, seed, backend=None):
    """m replicates of Psi beta + Z2 + eps with beta ~ N(0, Q^-1)."""
    rng = np.random.default_rng(seed)
    locations = np.asarray(locations, dtype=float)
    psi = np.asarray(psi, dtype=float)
    n = locations.shape[0]
    p = psi.shape[1] if psi.ndim == 2 else 0
    values = np.zeros((n, m))
    if p:
        Lq = chol_dense(Q, "Q")
        beta = sla.solve_triangular(Lq.T, rng.standard_normal((p, m)), lower=False)
        values += psi @ beta
    if spec.variance + spec.nugget > 0:
        D = assemble_D(locations, spec)
        factor = factorize(D, backend=backend, label=str(spec))
        values += factor.correlate(rng.standard_normal((n, m)))
    return SpatialDataset(locations, values)


@dataclass
class RecoveryReport:
    frobenius: float
    missed_nonzero: float
    missed_zero: float
    param_errors: dict = field(default_factory=dict)
    likelihood_ratio: float = math.nan

    def as_row(self):
        row = {"frobenius": self.frobenius, "missed_nonzero": self.missed_nonzero,
               "missed_zero": self.missed_zero, "likelihood_ratio": self.likelihood_ratio}
        row.update(self.param_errors)
        return row


def recovery_report(Q_hat, Q, spec_hat=None, spec=None, stats_hat=None, stats=None):
    """Frobenius error, pattern errors, parameter errors and likelihood ratio.

    Parameter errors are absolute; the nugget is compared on the log10 scale.
    The ratio is L(Q_hat, p_hat) / L(Q, p) with each L evaluated on its own
    sufficient statistics.
    """
    Q_hat = np.asarray(Q_hat, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if Q_hat.shape != Q.shape:
        raise ParameterDomainError("Q_hat and Q differ in shape")
    frob = float(np.linalg.norm(Q_hat - Q) / np.linalg.norm(Q))
    off = ~np.eye(Q.shape[0], dtype=bool)
    true_nz = off & (np.abs(Q) > ZERO_THRESHOLD)
    true_z = off & ~true_nz
    hat_nz = np.abs(Q_hat) > ZERO_THRESHOLD
    missed_nz = 100.0 * np.sum(true_nz & ~hat_nz) / true_nz.sum() if true_nz.any() else 0.0
    missed_z = 100.0 * np.sum(true_z & hat_nz) / true_z.sum() if true_z.any() else 0.0
    errors = {}
    if spec_hat is not None and spec is not None:
        for k, v in spec.params.items():
            if k in spec_hat.params:
                errors[k] = abs(spec_hat.params[k] - v)
        if spec.nugget > 0 and spec_hat.nugget > 0:
            errors["log10_nugget"] = abs(math.log10(spec_hat.nugget) - math.log10(spec.nugget))
    ratio = math.nan
    if stats_hat is not None and stats is not None:
        ratio = negloglik_reduced(Q_hat, stats_hat) / negloglik_reduced(Q, stats)
    return RecoveryReport(frob, float(missed_nz), float(missed_z), errors, ratio)


# ---------------------------------------------------------------- studies

@dataclass
class StudyConfig:
    graph: PrecisionGraphSpec = field(default_factory=PrecisionGraphSpec)
    truth: SmallScaleSpec = field(default_factory=lambda: SmallScaleSpec(
        "tapered_matern", {"sigma2": 1.0, "range": 0.15, "nu": 0.5, "taper": 0.3}, 0.01))
    basis: BasisSpec = field(default_factory=BasisSpec)
    grid_side: int = 50
    m_values: tuple = (10, 100)
    trials: int = 10
    lams: tuple = HALF_DECADE_LAMBDAS
    family: str = "tapered_matern"
    n_components: int = 1
    anneal: dict = field(default_factory=dict)
    master_seed: int = 20240101
    workers: int = 1
    backend: str | None = None
    delta: float = 0.02
    tol: float = 1e-6
    stage1_only: bool = False

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("grid_side", "trials", "family", "n_components",
                                           "anneal", "master_seed", "workers", "backend",
                                           "delta", "tol", "stage1_only")}
        d["m_values"] = list(self.m_values)
        d["lams"] = list(self.lams)
        d["graph"] = self.graph.to_dict()
        d["truth"] = self.truth.to_dict()
        d["basis"] = self.basis.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "graph" in d:
            d["graph"] = PrecisionGraphSpec(**d["graph"])
        if "truth" in d:
            d["truth"] = SmallScaleSpec.from_dict(d["truth"])
        if "basis" in d:
            d["basis"] = BasisSpec.from_dict(d["basis"])
        for k in ("m_values", "lams"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class TrialRecord:
    trial: int
    m: int
    report: RecoveryReport | None
    spec_hat: SmallScaleSpec | None = None
    lam_best: float = math.nan
    lam_caic: float = math.nan
    reports_by_lam: dict = field(default_factory=dict)
    outer_iterations: dict = field(default_factory=dict)
    monotone: bool = True
    error: str | None = None


def trial_seeds(master_seed, trial):
    """(simulation seed, annealing seed) for one trial."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(trial,))
    sim, ann = ss.spawn(2)
    return int(sim.generate_state(1)[0]), int(ann.generate_state(1)[0])


def simulate_trial(cfg, trial, m=None):
    """Truth Q, Psi and the dataset of one trial.

    Each trial simulates max(m_values) replicates; smaller m use the leading
    columns, so datasets are nested within a trial.
    """
    locs = regular_grid(cfg.grid_side, cfg.basis.domain)
    psi = np.asarray(cfg.basis.evaluate(locs), dtype=float)
    Q = make_precision(cfg.graph)
    sim_seed, _ = trial_seeds(cfg.master_seed, trial)
    m_all = max(cfg.m_values)
    data = simulate_fields(Q, psi, locs, cfg.truth, m_all, sim_seed, cfg.backend)
    if m is not None and m != m_all:
        data = SpatialDataset(locs, data.values[:, :m])
    return Q, psi, data


def run_trial(cfg, trial, m):
    Q, psi, data = simulate_trial(cfg, trial, m)
    _, ann_seed = trial_seeds(cfg.master_seed, trial)
    ann = default_anneal_config(cfg.family, cfg.n_components,
                                **{"seed": ann_seed, **cfg.anneal})
    try:
        stage1 = fit_d_params(data, psi, cfg.family, ann, cfg.truth.metric, cfg.backend,
                              cfg.n_components)
        stats_true = center_and_stats(data, psi,
                                      factor=factor_D(data.locations, cfg.truth, cfg.backend))
        if cfg.stage1_only:
            rep = recovery_report(stage1.alpha * np.eye(len(Q)), Q, stage1.spec, cfg.truth)
            return TrialRecord(trial, m, rep, stage1.spec)
        path = select_lambda(data, psi, stage1.spec, sorted(cfg.lams, reverse=True),
                             stats=stage1.stats, backend=cfg.backend, delta=cfg.delta,
                             tol=cfg.tol, basis=cfg.basis)
    except FSBGLError as exc:
        log.warning("trial %d, m=%d failed: %s", trial, m, exc)
        return TrialRecord(trial, m, None, error=f"{type(exc).__name__}: {exc}")
    reports = {lam: recovery_report(mod.Q, Q, stage1.spec, cfg.truth, stage1.stats, stats_true)
               for lam, mod in path.fitted()}
    best = min(reports, key=lambda lam: reports[lam].frobenius)
    return TrialRecord(
        trial, m, reports[best], stage1.spec, best, path.lam_star, reports,
        {lam: mod.diagnostics.outer_iterations for lam, mod in path.fitted()},
        all(mod.diagnostics.is_monotone() for _, mod in path.fitted()))


@dataclass
class StudyResult:
    config: StudyConfig
    records: list

    def failures(self, m=None):
        return [r for r in self.records if r.report is None and (m is None or r.m == m)]

    def values(self, metric, m):
        out = []
        for r in self.records:
            if r.m == m and r.report is not None:
                row = r.report.as_row()
                if metric in row:
                    out.append(row[metric])
        return np.array(out)

    def median(self, metric, m):
        v = self.values(metric, m)
        return float(np.median(v)) if len(v) else math.nan

    def metrics(self):
        names = []
        for r in self.records:
            if r.report is not None:
                for k in r.report.as_row():
                    if k not in names:
                        names.append(k)
        return names

    def table(self):
        """Rows (metric, truth, median per m)."""
        truth = dict(self.config.truth.params)
        truth["log10_nugget"] = (math.log10(self.config.truth.nugget)
                                 if self.config.truth.nugget > 0 else math.nan)
        rows = []
        for metric in self.metrics():
            rows.append([metric, truth.get(metric, "")]
                        + [self.median(metric, m) for m in self.config.m_values])
        rows.append(["failed_trials", ""] + [len(self.failures(m)) for m in self.config.m_values])
        return rows

    def to_csv(self, path):
        from .io import atomic_open
        with atomic_open(path) as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "truth"] + [f"m={m}" for m in self.config.m_values])
            for row in self.table():
                w.writerow([_fmt(v) for v in row])

    def trials_csv(self, path):
        from .io import atomic_open
        metrics = self.metrics()
        with atomic_open(path) as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "m", "lam_best", "lam_caic", "error"] + metrics)
            for r in self.records:
                row = r.report.as_row() if r.report is not None else {}
                w.writerow([r.trial, r.m, _fmt(r.lam_best), _fmt(r.lam_caic), r.error or ""]
                           + [_fmt(row.get(k, math.nan)) for k in metrics])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _run(args):
    return run_trial(*args)


def run_study(cfg, trials=None):
    """All (trial, m) fits; per-trial seeds derive from the master seed."""
    trials = range(cfg.trials) if trials is None else trials
    if cfg.trials < 1:
        raise ParameterDomainError("need at least one trial")
    jobs = [(cfg, t, m) for t in trials for m in cfg.m_values]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            records = list(pool.map(_run, jobs))
    else:
        records = [_run(j) for j in jobs]
    return StudyResult(cfg, records)


# ------------------------------------------------------- held-out prediction

@dataclass
class HoldoutRecord:
    trial: int
    scores: dict
    specs: dict
    lams: dict


def run_holdout_trial(cfg, trial, fraction=0.1, rivals=("nugget",)):
    """Hide a random ``fraction`` of sites, fit on the rest, score predictions.

    The model family of ``cfg`` is compared with each family in ``rivals``
    (``"nugget"`` gives D = tau2 I).  Every replicate of every hidden site
    is predicted; scores are the mean CRPS over all of them.
    """
    if not 0 < fraction < 1:
        raise ParameterDomainError("holdout fraction must lie in (0, 1)")
    _, psi, data = simulate_trial(cfg, trial)
    sim_seed, ann_seed = trial_seeds(cfg.master_seed, trial)
    rng = np.random.default_rng([sim_seed, 1])
    n = len(data.locations)
    hidden = np.sort(rng.choice(n, max(1, int(round(fraction * n))), replace=False))
    keep = np.setdiff1d(np.arange(n), hidden)
    observed = SpatialDataset(data.locations[keep], data.values[keep])
    scores, specs, lams = {}, {}, {}
    for family in (cfg.family, *rivals):
        ann = default_anneal_config(family, cfg.n_components, **{"seed": ann_seed, **cfg.anneal})
        stage1 = fit_d_params(observed, psi[keep], family, ann, cfg.truth.metric, cfg.backend,
                              cfg.n_components)
        path = select_lambda(observed, psi[keep], stage1.spec, sorted(cfg.lams, reverse=True),
                             stats=stage1.stats, backend=cfg.backend, delta=cfg.delta,
                             tol=cfg.tol, basis=cfg.basis)
        pred = predict(path.best, observed, data.locations[hidden], backend=cfg.backend)
        scores[family] = score(pred, data.values[hidden])
        specs[family] = stage1.spec
        lams[family] = path.lam_star
    return HoldoutRecord(trial, scores, specs, lams)


def run_holdout_study(cfg, fraction=0.1, rivals=("nugget",), trials=None):
    """Held-out CRPS per trial; returns the records and the per-family mean."""
    trials = range(cfg.trials) if trials is None else trials
    records = [run_holdout_trial(cfg, t, fraction, rivals) for t in trials]
    means = {f: float(np.mean([r.scores[f].mean_crps for r in records]))
             for f in records[0].scores}
    return records, means
