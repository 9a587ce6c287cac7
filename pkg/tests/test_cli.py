import json

import numpy as np
import pytest

from spectralfqi.cli import _ints, main
from spectralfqi.dataset import load_trajectories
from spectralfqi.experiments import ExperimentSpec, split_indices
from spectralfqi.errors import ConfigurationError
from spectralfqi.spectral import estimate_covariance

SMALL_SIM = ["--n-traj", "3", "--horizon", "12", "--J", "2", "--block-length", "4"]
SMALL_FQI = ["--iterations", "2", "--epochs", "1", "--hidden", "4", "--batch-size", "8"]
SMALL_EVAL = ["--n-mc", "4", "--t-mc", "5", "--trees", "5", "--fqe-iterations", "2"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


def read_all(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_int_lists():
    assert _ints("0-3,10") == (0, 1, 2, 3, 10)
    assert _ints("5") == (5,)


def test_simulate_defaults_and_repeatability(tmp_path, capsys):
    code, res, _ = run(capsys, "simulate", "--out", tmp_path / "a", "--seeds", "0,1")
    assert code == 0 and len(res["files"]) == 3
    ds = load_trajectories(tmp_path / "a" / "dataset_seed0.csv")
    assert (ds.n_traj, ds.horizon, ds.m0, ds.block_lengths) == (6, 80, 2, (27,) * 4)
    run(capsys, "simulate", "--out", tmp_path / "b", "--seeds", "0,1")
    assert read_all(tmp_path / "a") == read_all(tmp_path / "b")


def test_simulate_independent_blocks(tmp_path, capsys):
    run(capsys, "simulate", "--out", tmp_path, "--setting", "independent-blocks",
        "--n-traj", "40", "--horizon", "100", "--J", "4", "--block-length", "3")
    _, cov = estimate_covariance(load_trajectories(tmp_path / "dataset_seed0.csv"))
    mask = np.kron(np.eye(4), np.ones((3, 3))).astype(bool)
    off = np.abs(cov[~mask]).max()
    assert off < 0.25 * np.abs(cov[mask]).max()


def test_train_then_evaluate(tmp_path, capsys):
    code, res, _ = run(capsys, "train", *SMALL_SIM, *SMALL_FQI, "--variant", "pca:3", "--out", tmp_path / "pol")
    assert code == 0 and res["variant"] == "pca:3"
    assert (tmp_path / "pol" / "basis.txt").exists()
    code, res, _ = run(capsys, "evaluate", *SMALL_SIM, *SMALL_EVAL, "--policy", tmp_path / "pol",
                       "--out", tmp_path / "ev")
    assert code == 0 and np.isfinite(res["mean"])
    run(capsys, "simulate", *SMALL_SIM, "--out", tmp_path / "data")
    code, res, _ = run(capsys, "evaluate", *SMALL_SIM, *SMALL_EVAL, "--policy", tmp_path / "pol",
                       "--eval-mode", "fqe", "--dataset", tmp_path / "data" / "dataset_seed0.csv",
                       "--out", tmp_path / "fqe")
    assert code == 0 and res["se"] == 0.0


def test_sweep_kappa_shape(tmp_path, capsys):
    code, res, _ = run(capsys, "sweep-kappa", *SMALL_SIM, *SMALL_FQI, *SMALL_EVAL,
                       "--seeds", "0-1", "--kappas", "1,3,6", "--out", tmp_path)
    assert code == 0
    table = res["table"]
    assert [r["kappa"] for r in table] == [1, 3, 6] and all(r["n"] == 2 for r in table)
    ve = [r["variance_explained"] for r in table]
    assert ve == sorted(ve) and ve[-1] <= 1 + 1e-12
    rows = (tmp_path / "values.tsv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 3


def test_compare_shape_and_self_comparison(tmp_path, capsys):
    code, res, _ = run(capsys, "compare", *SMALL_SIM, *SMALL_FQI, *SMALL_EVAL, "--seeds", "0-2",
                       "--variants", "all,pca:2,ave", "--out", tmp_path)
    assert code == 0
    # the first variant is the reference for every comparison
    assert set(res["means"]) == {"all", "pca:2", "ave"}
    summary = (tmp_path / "summary.tsv").read_text().splitlines()
    assert summary[0] == "label\tn\tmean\tse\tmargin"
    assert [line.split("\t")[0] for line in summary[1:]] == ["all", "pca:2", "ave", "all-pca:2", "all-ave"]


def test_compare_variant_with_itself(tmp_path, capsys):
    from spectralfqi.evaluation import compare_policies
    from spectralfqi.experiments import reports_by_label, run_replicates
    from spectralfqi.envsim import SimConfig
    from spectralfqi.fqi import FqiConfig
    from spectralfqi.neuralnet import TrainConfig
    spec = ExperimentSpec(sim=SimConfig(n_traj=3, horizon=12, block_lengths=(4, 4)),
                          variants=("ave",), fqi=FqiConfig(iterations=2, train=TrainConfig(epochs=1)),
                          hidden_widths=(4,), n_mc=4, t_mc=5, seeds=(0, 1, 2))
    rep = reports_by_label(run_replicates(spec))["ave"]
    again = reports_by_label(run_replicates(spec))["ave"]
    c = compare_policies(rep, again)
    assert c.mean_diff == 0.0 and c.margin == 0.0


def test_compare_on_fixed_dataset_uses_fqe(tmp_path, capsys):
    run(capsys, "simulate", *SMALL_SIM, "--n-traj", "5", "--out", tmp_path / "d")
    code, res, err = run(capsys, "compare", *SMALL_SIM, *SMALL_FQI, *SMALL_EVAL, "--seeds", "0-1",
                         "--dataset", tmp_path / "d" / "dataset_seed0.csv", "--n-test", "2",
                         "--variants", "pca:2,all", "--out", tmp_path / "c")
    assert code == 2 and json.loads(err)["error"] == "ConfigurationError"
    code, res, _ = run(capsys, "compare", *SMALL_SIM, *SMALL_FQI, *SMALL_EVAL, "--seeds", "0-1",
                       "--dataset", tmp_path / "d" / "dataset_seed0.csv", "--n-test", "2",
                       "--eval-mode", "fqe", "--variants", "pca:2,all", "--out", tmp_path / "c")
    assert code == 0 and list(res["differences"]) == ["pca:2-all"]


def test_gradient_check_command(tmp_path, capsys):
    code, res, _ = run(capsys, "gradient-check", "--out", tmp_path / "g.json")
    assert code == 0 and res["passed"] and res["max_relative_error"] < 1e-4
    first = (tmp_path / "g.json").read_bytes()
    run(capsys, "gradient-check", "--out", tmp_path / "g.json")
    assert (tmp_path / "g.json").read_bytes() == first


@pytest.mark.parametrize("argv", [["compare", "--out", "x", "--seeds", "a-b"],
                                  ["simulate"],
                                  ["nonsense"],
                                  ["simulate", "--out", "x", "--zeta", "-1"]])
def test_bad_arguments_give_json_error(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = run(capsys, *argv)
    rec = json.loads(err.strip().splitlines()[-1])
    assert code == 2 and set(rec) == {"error", "message"}


def test_split_indices():
    assert split_indices(4, 2, 0) == ([2, 3], [0, 1])
    assert split_indices(4, 2, 6) == split_indices(4, 2, 0)
    tests = {tuple(split_indices(5, 2, s)[1]) for s in range(10)}
    assert len(tests) == 10
    with pytest.raises(ConfigurationError):
        split_indices(3, 3, 0)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        ExperimentSpec(seeds=(1, 1))
    with pytest.raises(ConfigurationError):
        ExperimentSpec(dataset="x.csv")
    with pytest.raises(ConfigurationError):
        ExperimentSpec(eval_mode="bootstrap")
    with pytest.raises(ConfigurationError):
        ExperimentSpec(variants=("all", "all"))
    assert "out_dir" not in ExperimentSpec().to_record()


def test_auto_kappa_variants_stay_paired():
    from spectralfqi.envsim import SimConfig
    from spectralfqi.experiments import reports_by_label, run_replicates
    from spectralfqi.fqi import FqiConfig
    from spectralfqi.neuralnet import TrainConfig
    # a low threshold on a short dataset lets the chosen kappa vary by seed
    spec = ExperimentSpec(sim=SimConfig(n_traj=2, horizon=6, block_lengths=(4, 4)),
                          variants=("pca", "ave"), variance_threshold=0.6,
                          fqi=FqiConfig(iterations=1, train=TrainConfig(epochs=1)),
                          hidden_widths=(3,), n_mc=2, t_mc=3, seeds=tuple(range(8)))
    rows = run_replicates(spec)
    pca_rows = [r for r in rows if r["label"] == "pca"]
    assert len(pca_rows) == 8 and len({r["kappa"] for r in pca_rows}) > 1
    reports = reports_by_label(rows)
    assert set(reports) == {"pca", "ave"} and reports["pca"].seeds == reports["ave"].seeds
