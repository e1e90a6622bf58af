"""Derivative-free minimization on a bounded parameter grid.

Metropolis moves of one parameter at a time with geometric cooling, followed
by a greedy pattern search over grid neighbours and, optionally, a bounded
Nelder-Mead pass off the grid.  Grid objective values are cached.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import SearchFailureError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParamGrid:
    """``n`` points from ``lo`` to ``hi``, evenly spaced (in log10 if ``log10``)."""

    lo: float
    hi: float
    n: int
    log10: bool = False

    def __post_init__(self):
        if self.n < 1 or not self.hi >= self.lo:
            raise ValueError(f"empty grid [{self.lo}, {self.hi}] x {self.n}")
        if self.log10 and self.lo <= 0:
            raise ValueError("log10 grid needs a positive lower bound")

    def values(self):
        if self.n == 1:
            return np.array([self.lo])
        if self.log10:
            return np.logspace(np.log10(self.lo), np.log10(self.hi), self.n)
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def center(self):
        return (self.n - 1) // 2

    def nearest(self, value):
        v = self.values()
        if self.log10:
            return int(np.argmin(np.abs(np.log10(v) - np.log10(value))))
        return int(np.argmin(np.abs(v - value)))


@dataclass
class AnnealConfig:
    """Search boxes and schedule.

    ``t0`` is in the units of the objective; when ``None`` it is set so a
    median uphill move (over ``calibration_moves`` random moves from the
    start) is accepted with probability ``initial_acceptance``.  A move shifts one parameter by up to
    max(``proposal_scale``, ``proposal_frac`` * grid length * T / t0) grid
    steps, so moves shrink as the chain cools.  The chain stops once
    ``window`` consecutive steps each change the current objective by at most
    ``rel_tol`` relative (after ``min_steps``), or at ``max_steps``.
    ``restarts`` extra chains start from random grid points; the best point
    over all chains wins.  With ``screen`` > 0 the first chain starts from
    the best of the start point and ``screen`` Latin-hypercube grid points.
    ``refine_evals`` > 0 continues from the best grid point with bounded
    L-BFGS-B inside the box (forward-difference step ``refine_step`` of each
    box width), restarted while it keeps improving, for flat valleys the grid
    cannot resolve.  ``refine_evals`` caps the evaluations over all restarts.
    Keys in ``refine_exp10`` hold log10 values; the refinement moves them on
    the scale of 10**value.
    """

    grids: dict
    t0: float | None = None
    cooling: float = 0.97
    proposal_scale: int = 2
    proposal_frac: float = 0.25
    calibration_moves: int = 12
    initial_acceptance: float = 0.8
    window: int = 20
    rel_tol: float = 1e-3
    min_steps: int = 100
    max_steps: int = 300
    polish: bool = True
    max_polish_evals: int = 400
    seed: int = 0
    start: dict | None = None
    restarts: int = 0
    screen: int = 0
    refine_evals: int = 0
    refine_step: float = 1e-6
    refine_exp10: tuple = ()

    def __post_init__(self):
        if not 0 < self.cooling < 1:
            raise ValueError("cooling factor must lie in (0, 1)")
        if not 0 < self.initial_acceptance < 1:
            raise ValueError("initial acceptance must lie in (0, 1)")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if not self.grids:
            raise ValueError("no parameters to search")

    def to_dict(self):
        d = {k: getattr(self, k) for k in (
            "t0", "cooling", "proposal_scale", "proposal_frac", "calibration_moves",
            "initial_acceptance", "window", "rel_tol", "min_steps", "max_steps", "polish", "max_polish_evals", "seed", "start",
            "restarts", "screen", "refine_evals", "refine_step")}
        d["refine_exp10"] = list(self.refine_exp10)
        d["grids"] = {k: {"lo": g.lo, "hi": g.hi, "n": g.n, "log10": g.log10}
                      for k, g in self.grids.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["grids"] = {k: ParamGrid(**g) for k, g in d["grids"].items()}
        if "refine_exp10" in d:
            d["refine_exp10"] = tuple(d["refine_exp10"])
        return cls(**d)


@dataclass
class AnnealResult:
    point: dict
    value: float
    n_evals: int
    steps: int
    trace: list = field(default_factory=list)
    converged: bool = False


def anneal(objective, config):
    """Minimize ``objective(point_dict) -> float`` over the config's grids.

    Infeasible points should return ``inf`` or raise ``ArithmeticError``.
    """
    names = list(config.grids)
    axes = [config.grids[k].values() for k in names]
    sizes = [len(a) for a in axes]
    rng = np.random.default_rng(config.seed)
    cache = {}

    def f(idx):
        if idx not in cache:
            point = {k: float(ax[i]) for k, ax, i in zip(names, axes, idx)}
            try:
                cache[idx] = float(objective(point))
            except ArithmeticError:
                cache[idx] = math.inf
        return cache[idx]

    if config.start:
        first = tuple(config.grids[k].nearest(config.start[k]) for k in names)
    else:
        first = tuple(config.grids[k].center for k in names)
    if config.screen:
        cands = [first] + _latin_hypercube(sizes, config.screen, rng)
        first = min(cands, key=f)
    best, best_v = None, math.inf
    steps, converged, trace = 0, False, []
    for chain in range(config.restarts + 1):
        start = first if chain == 0 else tuple(int(rng.integers(n)) for n in sizes)
        b, bv, st, conv, tr = _chain(f, start, sizes, config, rng)
        steps += st
        trace += tr
        converged = converged or conv
        if bv < best_v:
            best, best_v = b, bv
    if config.polish:
        best, best_v = _pattern_search(f, best, best_v, sizes,
                                       len(cache) + config.max_polish_evals, cache)
    point = {k: float(ax[i]) for k, ax, i in zip(names, axes, best)}
    n_evals = len(cache)
    if config.refine_evals > 0 and math.isfinite(best_v):
        point, best_v, used = _refine(objective, config, point, best_v)
        n_evals += used
        trace.append(best_v)
    log.debug("anneal: %d steps, %d evaluations, best %.6g", steps, n_evals, best_v)
    return AnnealResult(point, best_v, n_evals, steps, trace, converged)


def _refine(objective, config, point, value):
    """Bounded L-BFGS-B from the annealed point, in box-scaled coordinates.

    Everything moves on its linear scale, log-spaced grids and
    ``refine_exp10`` keys included: a parameter whose effect fades as it
    approaches zero (a nugget, say) has a vanishing gradient in log
    coordinates, which stalls any local method there.
    """
    names = list(config.grids)
    exp10 = np.array([k in config.refine_exp10 for k in names])
    lo = np.array([config.grids[k].lo for k in names], dtype=float)
    hi = np.array([config.grids[k].hi for k in names], dtype=float)
    lo[exp10], hi[exp10] = 10 ** lo[exp10], 10 ** hi[exp10]
    width = hi - lo
    width[width == 0] = 1.0

    def scale(x):
        x = np.array(x, dtype=float)
        x[exp10] = 10 ** x[exp10]
        return np.clip((x - lo) / width, 0, 1)

    def unscale(u):
        x = lo + np.clip(u, 0, 1) * width
        x[exp10] = np.log10(x[exp10])
        return {k: float(v) for k, v in zip(names, x)}

    def f(u):
        try:
            v = float(objective(unscale(u)))
        except ArithmeticError:
            return math.inf
        return v if math.isfinite(v) else math.inf

    u = scale([point[k] for k in names])
    best, used = value, 0
    # restarts drop the curvature memory and the active bounds, which lets a
    # parameter pinned at a bound early on come back once the others settle
    while used < config.refine_evals:
        res = minimize(f, u, method="L-BFGS-B", bounds=[(0, 1)] * len(names),
                       options={"maxfun": config.refine_evals - used, "ftol": 1e-12,
                                "gtol": 1e-8, "eps": config.refine_step})
        used += int(res.nfev)
        gain = best - float(res.fun)
        if gain > 0:
            best, u = float(res.fun), res.x
        if not gain > 1e-9 * abs(best) + 1e-6 or used < 3 * len(names):
            break
    if best < value:
        return unscale(u), best, used
    return point, value, used


def _latin_hypercube(sizes, k, rng):
    cols = [rng.permutation(k) for _ in sizes]
    return [tuple(int((c[i] + rng.random()) * n / k) for c, n in zip(cols, sizes))
            for i in range(k)]


def _propose(cur, sizes, reach, rng):
    k = int(rng.integers(len(sizes)))
    size = int(rng.integers(1, reach[k] + 1))
    move = size if rng.random() < 0.5 else -size
    i = cur[k] + move
    if not 0 <= i < sizes[k]:
        i = cur[k] - move
        if not 0 <= i < sizes[k]:
            return None
    return cur[:k] + (i,) + cur[k + 1:]


def _chain(f, cur, sizes, config, rng):
    cur_v = f(cur)
    tries = 0
    while not math.isfinite(cur_v):
        tries += 1
        if tries > 200:
            raise SearchFailureError("no feasible starting point found on the grid")
        cur = tuple(int(rng.integers(n)) for n in sizes)
        cur_v = f(cur)
    widest = [max(config.proposal_scale, int(config.proposal_frac * n)) for n in sizes]
    t0 = config.t0
    if t0 is None:
        ups = []
        for _ in range(config.calibration_moves):
            cand = _propose(cur, sizes, widest, rng)
            if cand is not None:
                v = f(cand)
                if math.isfinite(v) and v > cur_v:
                    ups.append(v - cur_v)
        t0 = float(np.median(ups)) / -math.log(config.initial_acceptance) if ups else 1.0
    best, best_v = cur, cur_v
    trace = [cur_v]
    quiet = 0
    converged = False
    step = 0
    for step in range(1, config.max_steps + 1):
        temp = t0 * config.cooling**step
        frac = temp / t0
        reach = [max(config.proposal_scale, int(math.ceil(w * frac))) for w in widest]
        cand = _propose(cur, sizes, reach, rng)
        prev_v = cur_v
        if cand is not None:
            v = f(cand)
            if v <= cur_v or (math.isfinite(v)
                              and rng.random() < math.exp(-(v - cur_v) / temp)):
                cur, cur_v = cand, v
            if cur_v < best_v:
                best, best_v = cur, cur_v
        trace.append(cur_v)
        quiet = quiet + 1 if abs(cur_v - prev_v) <= config.rel_tol * abs(prev_v) else 0
        if step >= config.min_steps and quiet >= config.window:
            converged = True
            break
    return best, best_v, step, converged, trace


def _pattern_search(f, best, best_v, sizes, eval_cap, cache):
    improved = True
    while improved and len(cache) < eval_cap:
        improved = False
        for k in range(len(sizes)):
            for direction in (1, -1):
                moved = False
                stride = 1
                while len(cache) < eval_cap:
                    i = best[k] + direction * stride
                    if not 0 <= i < sizes[k]:
                        break
                    cand = best[:k] + (i,) + best[k + 1:]
                    v = f(cand)
                    if v < best_v:
                        best, best_v = cand, v
                        moved = improved = True
                        stride *= 2
                    else:
                        break
                if moved:
                    break
    return best, best_v
