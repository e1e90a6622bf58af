"""Command-line interface.

    fsbgl [--config FILE] [--set KEY=VALUE ...] [--threads N] COMMAND ...

Settings live in a YAML file with one section per command (``simulate``,
``fit``, ``select``, ``predict``, ``study``); ``--set`` overrides keys of the
running command's section, with dots for nesting (``--set graph.kind=hub_and_spoke``).
A manifest written by any command can be passed back as ``--config``.

Exit codes: 0 success, 1 usage or bad configuration, 2 numerical failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy
import yaml

from . import __version__, io
from .anneal import ParamGrid
from .basis import BasisSpec, regular_grid
from .covkernels import SmallScaleSpec
from .dcfit import (HALF_DECADE_LAMBDAS, FittedModel, FitDiagnostics, default_anneal_config,
                    fit_d_params, select_lambda)
from .errors import FSBGLError, NumericalError
from .predictor import predict, read_predictions, score, score_arrays, write_predictions
from .simlab import PrecisionGraphSpec, StudyConfig, make_precision, run_study, simulate_fields

log = logging.getLogger("fsbgl")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

DEFAULT_TRUTH = {"family": "tapered_matern",
                 "params": {"sigma2": 1.0, "range": 0.15, "nu": 0.5, "taper": 0.3},
                 "nugget": 0.01, "metric": "euclidean"}


@dataclass
class SimulateConfig:
    grid_side: int = 50
    m: int = 100
    seed: int = 0
    graph: dict = field(default_factory=lambda: asdict(PrecisionGraphSpec()))
    truth: dict = field(default_factory=lambda: dict(DEFAULT_TRUTH))
    basis: dict = field(default_factory=lambda: BasisSpec().to_dict())


@dataclass
class FitConfig:
    family: str = "tapered_matern"
    n_components: int = 1
    metric: str = "euclidean"
    bgl: bool = False
    lams: list = field(default_factory=lambda: list(HALF_DECADE_LAMBDAS))
    delta: float = 0.02
    tol: float = 1e-6
    anneal: dict = field(default_factory=dict)
    basis: dict = field(default_factory=lambda: BasisSpec().to_dict())
    backend: str | None = None


@dataclass
class PredictConfig:
    chunk: int = 1000
    backend: str | None = None


SECTIONS = {"simulate": SimulateConfig, "fit": FitConfig, "select": FitConfig,
            "predict": PredictConfig, "study": StudyConfig}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- config

def _set_path(d, dotted, value):
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
        if not isinstance(d, dict):
            raise UsageError(f"cannot set {dotted}: {k} is not a section")
    d[keys[-1]] = value


def load_section(command, config_path=None, overrides=()):
    """Merged settings dict for ``command``: defaults < file < --set."""
    raw = {}
    if config_path:
        raw = io.read_yaml(config_path)
        if "config" in raw and "command" in raw:  # a manifest
            raw = raw["config"]
    section = dict(raw.get(command, {}) or {})
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        _set_path(section, key.strip(), yaml.safe_load(value))
    if command == "study":
        return section
    cls = SECTIONS[command]
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise UsageError(f"unknown {command} settings: {sorted(unknown)}")
    defaults = asdict(cls())
    for k, v in section.items():
        if isinstance(defaults.get(k), dict) and isinstance(v, dict):
            defaults[k] = {**defaults[k], **v}
        else:
            defaults[k] = v
    return defaults


def _anneal_config(family, n_components, overrides):
    overrides = dict(overrides)
    grids = overrides.pop("grids", None)
    cfg = default_anneal_config(family, n_components, **overrides)
    if grids:
        cfg.grids.update({k: ParamGrid(**g) for k, g in grids.items()})
    return cfg


# ---------------------------------------------------------------- manifest

class Manifest:
    def __init__(self, command, config, argv):
        self.data = {"command": command, "status": "running", "argv": list(argv),
                     "config": {command: config}, "stage": None,
                     "software": {"fsbgl": __version__, "numpy": np.__version__,
                                  "scipy": scipy.__version__,
                                  "python": platform.python_version()}}
        self._t0 = time.time()

    def stage(self, name):
        self.data["stage"] = name
        log.info("stage: %s", name)

    def write(self, folder, status):
        self.data["status"] = status
        self.data["wall_time_s"] = round(time.time() - self._t0, 3)
        io.write_yaml(os.path.join(folder, "manifest.yaml"), self.data)


# ---------------------------------------------------------------- commands

def cmd_simulate(args, cfg, manifest):
    out = args.out
    basis = BasisSpec.from_dict(cfg["basis"])
    graph = PrecisionGraphSpec(**{**cfg["graph"], "dim": basis.n_columns})
    truth = SmallScaleSpec.from_dict(cfg["truth"])
    locs = regular_grid(cfg["grid_side"], basis.domain)
    psi = np.asarray(basis.evaluate(locs), dtype=float)
    manifest.stage("simulate")
    Q = make_precision(graph)
    data = simulate_fields(Q, psi, locs, truth, int(cfg["m"]), int(cfg["seed"]))
    io.write_dataset(out, data)
    io.write_triplets(os.path.join(out, "truth_Q.csv"), Q)
    io.write_yaml(os.path.join(out, "truth_spec.yaml"), truth.to_dict())
    manifest.data["seeds"] = {"simulation": int(cfg["seed"])}
    print(f"wrote {data.n} sites x {data.m} replicates to {out}")


def _fit_common(args, cfg, manifest, spec=None):
    data = io.read_dataset(args.data)
    basis = BasisSpec.from_dict(cfg["basis"])
    psi = np.asarray(basis.evaluate(data.locations), dtype=float)
    family = "nugget" if cfg["bgl"] else cfg["family"]
    stats = None
    if spec is None:
        manifest.stage("small-scale parameters")
        ann = _anneal_config(family, cfg["n_components"], cfg["anneal"])
        manifest.data["seeds"] = {"anneal": ann.seed}
        manifest.data["tolerances"] = {"delta": cfg["delta"], "glasso_tol": cfg["tol"],
                                       "anneal_window": ann.window,
                                       "anneal_rel_tol": ann.rel_tol}
        stage1 = fit_d_params(data, psi, family, ann, cfg["metric"], cfg["backend"],
                              cfg["n_components"])
        spec, stats = stage1.spec, stage1.stats
        io.write_yaml(os.path.join(args.out, "spec.yaml"),
                      {**spec.to_dict(), "alpha": stage1.alpha, "objective": stage1.objective,
                       "evaluations": stage1.n_evals})
        io.write_matrix(os.path.join(args.out, "stage1_trace.csv"),
                        np.column_stack([np.arange(len(stage1.trace)), stage1.trace]),
                        header=["step", "objective"])
    manifest.stage("penalty path")
    lams = sorted((float(v) for v in cfg["lams"]), reverse=True)
    path = select_lambda(data, psi, spec, lams, stats=stats, backend=cfg["backend"],
                         delta=cfg["delta"], tol=cfg["tol"], basis=basis)
    rows = []
    for i, (lam, model) in enumerate(zip(path.lams, path.models)):
        if model is None:
            rows.append([i, lam, math.nan, math.nan, math.nan, math.nan, 0, 0, 0,
                         str(path.errors[i])])
            continue
        d = model.diagnostics
        io.write_triplets(os.path.join(args.out, f"Q_lam{i}.csv"), model.Q)
        io.write_matrix(os.path.join(args.out, f"diagnostics_lam{i}.csv"), d.rows(),
                        header=["iteration", "objective", "relative_change"])
        rows.append([i, lam, d.caic, d.df_e, d.hat_trace, d.loglik, d.outer_iterations,
                     int(d.converged), int(i == path.index), ""])
    with io.atomic_open(os.path.join(args.out, "path.csv")) as fh:
        w = csv.writer(fh)
        w.writerow(["index", "lam", "caic", "df_e", "hat_trace", "loglik",
                    "outer_iterations", "converged", "selected", "error"])
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    best = path.best
    io.write_yaml(os.path.join(args.out, "model.yaml"),
                  {"lam": best.lam, "Q_file": f"Q_lam{path.index}.csv", "alpha": best.alpha,
                   "spec": spec.to_dict(), "basis": basis.to_dict()})
    print(f"selected lambda {best.lam:.6g} (cAIC {best.diagnostics.caic:.6g}); {spec}")


def cmd_fit(args, cfg, manifest):
    _fit_common(args, cfg, manifest)


def cmd_select(args, cfg, manifest):
    spec = SmallScaleSpec.from_dict(io.read_yaml(args.spec))
    _fit_common(args, cfg, manifest, spec)


def load_model(folder):
    path = os.path.join(folder, "model.yaml")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no fitted model at {path}")
    meta = io.read_yaml(path)
    Q = io.read_triplets(os.path.join(folder, meta["Q_file"]))
    return FittedModel(Q, SmallScaleSpec.from_dict(meta["spec"]), float(meta["lam"]),
                       FitDiagnostics(), BasisSpec.from_dict(meta["basis"]),
                       alpha=float(meta.get("alpha", math.nan)))


def cmd_predict(args, cfg, manifest):
    model = load_model(args.model)
    data = io.read_dataset(args.data)
    targets = io.read_locations(args.targets)
    if len(targets) == 0:
        raise FSBGLErrorWrapper("target file is empty")
    truth = None
    if args.truth:
        truth, _ = io.read_matrix(args.truth, header=True)
    manifest.stage("predict")
    pred = predict(model, data, targets, chunk=int(cfg["chunk"]), backend=cfg["backend"])
    out = args.out
    write_predictions(out, pred, truth)
    if truth is not None:
        s = score(pred, truth)
        _report(s, os.path.splitext(out)[0] + "_score.yaml")
    print(f"wrote {len(targets)} x {data.m} predictions to {out}")


def cmd_score(args, cfg, manifest):
    mu, sd, y = read_predictions(args.predictions)
    if np.any(np.isnan(y)):
        raise FSBGLErrorWrapper("predictions file has no truth column values")
    s = score_arrays(mu, sd, y)
    _report(s, args.out)


def _report(s, path):
    summary = {"mean_crps": s.mean_crps, "median_crps": s.median_crps, "rmse": s.rmse, "n": s.n}
    if path:
        io.write_yaml(path, summary)
    print(f"mean CRPS {s.mean_crps:.6g}  median CRPS {s.median_crps:.6g}  RMSE {s.rmse:.6g}"
          f"  (n={s.n})")


def cmd_study(args, cfg, manifest):
    if args.threads:
        cfg["workers"] = args.threads
    study = StudyConfig.from_dict(cfg)
    manifest.data["config"] = {"study": study.to_dict()}
    manifest.data["seeds"] = {"master": study.master_seed}
    manifest.stage("study")
    result = run_study(study)
    result.to_csv(os.path.join(args.out, "study.csv"))
    result.trials_csv(os.path.join(args.out, "trials.csv"))
    for row in result.table():
        print("  ".join(str(v) if not isinstance(v, float) else f"{v:.4g}" for v in row))


class FSBGLErrorWrapper(FSBGLError, ValueError):
    """Bad input detected by the CLI itself."""


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "select": cmd_select,
            "predict": cmd_predict, "score": cmd_score, "study": cmd_study}


def build_parser():
    p = _Parser(prog="fsbgl", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", help="YAML settings file (or a manifest)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a setting of the running command")
    p.add_argument("--threads", type=int, default=0, help="cap on worker processes")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("simulate", help="simulate fields from a known model")
    s.add_argument("--out", required=True)
    s = sub.add_parser("fit", help="estimate small-scale parameters and Q over a penalty path")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s = sub.add_parser("select", help="penalty path for Q with a given small-scale spec")
    s.add_argument("--data", required=True)
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s = sub.add_parser("predict", help="kriging predictions at target locations")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--targets", required=True)
    s.add_argument("--truth", help="held-out values (targets x replicates CSV)")
    s.add_argument("--out", required=True)
    s = sub.add_parser("score", help="CRPS and RMSE summary of a predictions CSV")
    s.add_argument("--predictions", required=True)
    s.add_argument("--out", help="write the summary as YAML")
    s = sub.add_parser("study", help="simulation recovery study")
    s.add_argument("--out", required=True)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    manifest = None
    out_dir = None
    try:
        cfg = load_section(args.command, args.config, args.set) if args.command != "score" else {}
        if args.command in ("simulate", "fit", "select", "study"):
            out_dir = args.out
        elif args.command == "predict":
            out_dir = os.path.dirname(os.path.abspath(args.out))
        manifest = Manifest(args.command, cfg, argv)
        COMMANDS[args.command](args, cfg, manifest)
    except (UsageError, FSBGLErrorWrapper) as exc:
        print(f"fsbgl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        stage = manifest.data["stage"] if manifest else None
        print(f"fsbgl: numerical failure{f' in {stage}' if stage else ''}: {exc}",
              file=sys.stderr)
        _try_manifest(manifest, out_dir, "failed")
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"fsbgl: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FSBGLError, ValueError, TypeError, KeyError) as exc:
        print(f"fsbgl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if out_dir:
        manifest.write(out_dir, "ok")
    return EXIT_OK


def _try_manifest(manifest, out_dir, status):
    if manifest is not None and out_dir:
        try:
            manifest.write(out_dir, status)
        except OSError:
            pass


if __name__ == "__main__":
    sys.exit(main())
