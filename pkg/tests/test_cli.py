import numpy as np
import pytest
import yaml

from fsbgl import io
from fsbgl.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_USAGE, main
from fsbgl.predictor import read_predictions, score_arrays

CONFIG = {
    "simulate": {"grid_side": 10, "m": 5, "seed": 3, "basis": {"m_max": 2},
                 "graph": {"block_size": 3}},
    "fit": {"basis": {"m_max": 2}, "lams": [1.0, 0.1],
            "anneal": {"max_steps": 12, "min_steps": 5, "screen": 4, "refine_evals": 20}},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    io.write_yaml(d / "cfg.yaml", CONFIG)
    assert main(["--config", str(d / "cfg.yaml"), "simulate", "--out", str(d / "sim")]) == 0
    assert main(["--config", str(d / "cfg.yaml"), "fit", "--data", str(d / "sim"),
                 "--out", str(d / "fit")]) == 0
    return d


def test_simulate_outputs(workdir):
    sim = workdir / "sim"
    for name in ("locations.csv", "replicates.csv", "truth_Q.csv", "truth_spec.yaml",
                 "manifest.yaml"):
        assert (sim / name).exists()
    ds = io.read_dataset(sim)
    assert ds.values.shape == (100, 5)
    assert io.read_triplets(sim / "truth_Q.csv").shape == (9, 9)


def test_simulate_same_seed_same_files(workdir, tmp_path):
    assert main(["--config", str(workdir / "cfg.yaml"), "simulate", "--out", str(tmp_path)]) == 0
    for name in ("locations.csv", "replicates.csv", "truth_Q.csv"):
        assert (tmp_path / name).read_bytes() == (workdir / "sim" / name).read_bytes()


def test_default_simulate_shape(tmp_path):
    assert main(["--set", "m=100", "simulate", "--out", str(tmp_path)]) == 0
    ds = io.read_dataset(tmp_path)
    assert ds.values.shape == (2500, 100)


def test_fit_outputs_and_manifest(workdir):
    fit = workdir / "fit"
    names = {p.name for p in fit.iterdir()}
    assert {"spec.yaml", "stage1_trace.csv", "Q_lam0.csv", "Q_lam1.csv", "path.csv",
            "model.yaml", "manifest.yaml", "diagnostics_lam0.csv"} <= names
    man = io.read_yaml(fit / "manifest.yaml")
    assert man["status"] == "ok" and man["command"] == "fit"
    assert {"anneal"} <= set(man["seeds"])
    assert man["tolerances"]["delta"] == 0.02
    assert "wall_time_s" in man and "fsbgl" in man["software"]


def test_rerun_from_manifest_reproduces(workdir, tmp_path):
    rc = main(["--config", str(workdir / "fit" / "manifest.yaml"), "fit",
               "--data", str(workdir / "sim"), "--out", str(tmp_path)])
    assert rc == 0
    for name in ("Q_lam0.csv", "Q_lam1.csv", "spec.yaml", "path.csv"):
        assert (tmp_path / name).read_bytes() == (workdir / "fit" / name).read_bytes()


def test_singleton_grid_writes_one_Q(workdir, tmp_path):
    rc = main(["--config", str(workdir / "cfg.yaml"), "--set", "lams=[0.5]", "fit",
               "--data", str(workdir / "sim"), "--out", str(tmp_path)])
    assert rc == 0
    assert sorted(p.name for p in tmp_path.glob("Q_lam*.csv")) == ["Q_lam0.csv"]


def test_bgl_mode_fits_nugget_only(workdir, tmp_path):
    rc = main(["--config", str(workdir / "cfg.yaml"), "--set", "bgl=true", "fit",
               "--data", str(workdir / "sim"), "--out", str(tmp_path)])
    assert rc == 0
    spec = io.read_yaml(tmp_path / "spec.yaml")
    assert spec["family"] == "nugget" and spec["params"] == {}
    assert spec["nugget"] > 0 and spec["alpha"] > 0


def test_select_with_given_spec(workdir, tmp_path):
    rc = main(["--config", str(workdir / "cfg.yaml"), "select", "--data", str(workdir / "sim"),
               "--spec", str(workdir / "sim" / "truth_spec.yaml"), "--out", str(tmp_path)])
    assert rc == 0
    assert not (tmp_path / "stage1_trace.csv").exists()
    assert (tmp_path / "Q_lam1.csv").exists()


def test_predict_and_score(workdir, tmp_path):
    sim = io.read_dataset(workdir / "sim")
    io.write_locations(tmp_path / "targets.csv", sim.locations)
    io.write_matrix(tmp_path / "truth.csv", sim.values, header=[f"r{k}" for k in range(5)])
    out = tmp_path / "pred.csv"
    rc = main(["predict", "--model", str(workdir / "fit"), "--data", str(workdir / "sim"),
               "--targets", str(tmp_path / "targets.csv"), "--truth", str(tmp_path / "truth.csv"),
               "--out", str(out)])
    assert rc == 0
    summary = io.read_yaml(tmp_path / "pred_score.yaml")
    assert 0 < summary["rmse"] < sim.values.std()
    assert main(["score", "--predictions", str(out), "--out", str(tmp_path / "s.yaml")]) == 0
    again = io.read_yaml(tmp_path / "s.yaml")
    assert again == summary
    mu, sd, y = read_predictions(out)
    assert again["mean_crps"] == score_arrays(mu, sd, y).mean_crps


def test_predict_errors(workdir, tmp_path):
    io.write_locations(tmp_path / "empty.csv", np.zeros((0, 2)))
    args = ["predict", "--data", str(workdir / "sim"), "--out", str(tmp_path / "p.csv")]
    assert main(args + ["--model", str(workdir / "fit"),
                        "--targets", str(tmp_path / "empty.csv")]) == EXIT_USAGE
    assert main(args + ["--model", str(tmp_path / "nowhere"),
                        "--targets", str(tmp_path / "empty.csv")]) == EXIT_IO


def test_usage_errors(workdir, capsys):
    assert main(["--set", "bogus=1", "fit", "--data", "x", "--out", "y"]) == EXIT_USAGE
    assert main(["--set", "novalue", "simulate", "--out", "y"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["launch"])
    assert exc.value.code == EXIT_USAGE


def test_missing_data_is_io_error(tmp_path):
    assert main(["fit", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == EXIT_IO


def test_numerical_failure_exit_code(workdir, tmp_path):
    bad = dict(CONFIG["fit"], lams=[1.0])
    spec = {"family": "nugget", "params": {}, "nugget": 0.0, "metric": "euclidean"}
    io.write_yaml(tmp_path / "spec.yaml", spec)
    io.write_yaml(tmp_path / "cfg.yaml", {"select": bad})
    rc = main(["--config", str(tmp_path / "cfg.yaml"), "select", "--data", str(workdir / "sim"),
               "--spec", str(tmp_path / "spec.yaml"), "--out", str(tmp_path / "o")])
    assert rc == EXIT_NUMERICAL
    assert io.read_yaml(tmp_path / "o" / "manifest.yaml")["status"] == "failed"


def test_study_command(tmp_path):
    sets = ["grid_side=8", "m_values=[4]", "trials=1", "basis.m_max=1", "graph.dim=4",
            "graph.block_size=2", "lams=[1.0]", "anneal.max_steps=5", "anneal.min_steps=2",
            "anneal.screen=2", "anneal.refine_evals=10"]
    args = [a for s in sets for a in ("--set", s)]
    assert main(args + ["--threads", "1", "study", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "study.csv").read_text().splitlines()
    assert lines[0] == "metric,truth,m=4"
    man = yaml.safe_load((tmp_path / "manifest.yaml").read_text())
    assert man["config"]["study"]["trials"] == 1
