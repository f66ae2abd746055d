"""Command-line interface, exercised in process through cli.main."""

import json

import numpy as np
import pytest

from fsvd import cli
from fsvd.decomposition import FsvdModel


def _write_data(tmp_path, n=15, seed=0):
    path = tmp_path / "data.csv"
    rc = cli.main(
        [
            "simulate", "--scenario", "completion", "--n", str(n),
            "--j-low", "6", "--j-high", "10", "--seed", str(seed),
            "--out-prefix", str(tmp_path / "sim"),
        ]
    )
    assert rc == 0
    (tmp_path / "sim_data.csv").rename(path)
    return path


def _fit_model(tmp_path, data_path):
    model_path = tmp_path / "model.json"
    rc = cli.main(
        [
            "fit", "--input", str(data_path), "--rank", "3",
            "--nu", "1e-6", "--output", str(model_path),
        ]
    )
    assert rc == 0
    return model_path


def test_fit_writes_valid_model(tmp_path, capsys):
    data = _write_data(tmp_path)
    model_path = _fit_model(tmp_path, data)
    model = FsvdModel.from_json(model_path.read_text())
    assert model.rank == 3
    out = capsys.readouterr().out
    assert "rho" in out


def test_fit_missing_input_exit_2(tmp_path):
    out = tmp_path / "model.json"
    rc = cli.main(
        ["fit", "--input", str(tmp_path / "absent.csv"), "--output", str(out)]
    )
    assert rc == 2
    assert not out.exists()


def test_fit_malformed_input_exit_2(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("subject_id,time,value\ns1,zero,1\n")
    rc = cli.main(["fit", "--input", str(bad), "--output", str(tmp_path / "m.json")])
    assert rc == 2


def test_complete_grid_output(tmp_path, capsys):
    data = _write_data(tmp_path)
    model_path = _fit_model(tmp_path, data)
    capsys.readouterr()
    rc = cli.main(
        ["complete", "--model", str(model_path), "--subject", "0", "--times", "grid:5"]
    )
    assert rc == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert lines[0] == "time,value"
    assert len(lines) == 6
    times = [float(l.split(",")[0]) for l in lines[1:]]
    np.testing.assert_allclose(times, np.linspace(0.0, 1.0, 5))


def test_complete_unknown_subject_exit_4(tmp_path):
    data = _write_data(tmp_path)
    model_path = _fit_model(tmp_path, data)
    rc = cli.main(
        ["complete", "--model", str(model_path), "--subject", "nope", "--times", "0.5"]
    )
    assert rc == 4


def test_complete_rejects_non_model_json(tmp_path):
    bad = tmp_path / "notmodel.json"
    bad.write_text('{"schema": "fsvd-cluster/1"}')
    rc = cli.main(["complete", "--model", str(bad), "--subject", "0", "--times", "0.5"])
    assert rc == 2


def test_simulate_deterministic_bytes(tmp_path):
    for prefix in ("a", "b"):
        rc = cli.main(
            [
                "simulate", "--scenario", "regression", "--n", "12",
                "--j-low", "5", "--j-high", "9", "--seed", "3",
                "--out-prefix", str(tmp_path / prefix),
            ]
        )
        assert rc == 0
    for suffix in ("_data.csv", "_truth.json", "_z.csv"):
        assert (tmp_path / f"a{suffix}").read_bytes() == (
            tmp_path / f"b{suffix}"
        ).read_bytes()


def test_simulate_clustering_truth_has_labels(tmp_path):
    rc = cli.main(
        [
            "simulate", "--scenario", "clustering", "--n", "12",
            "--j-low", "5", "--j-high", "9",
            "--out-prefix", str(tmp_path / "cl"), "--verify",
        ]
    )
    assert rc == 0
    truth = json.loads((tmp_path / "cl_truth.json").read_text())
    assert truth["schema"] == "fsvd-truth/1"
    assert len(truth["labels"]) == 12


def test_cluster_command(tmp_path):
    data = _write_data(tmp_path, n=20)
    model_path = _fit_model(tmp_path, data)
    out = tmp_path / "clusters.json"
    rc = cli.main(
        [
            "cluster", "--input", str(data), "--model", str(model_path),
            "--clusters", "2", "--k", "2", "--output", str(out),
        ]
    )
    assert rc == 0
    obj = json.loads(out.read_text())
    assert obj["schema"] == "fsvd-cluster/1"
    assert len(obj["labels"]) == 20


def test_cluster_subject_mismatch_exit_2(tmp_path):
    data = _write_data(tmp_path, n=20)
    model_path = _fit_model(tmp_path, data)
    other = _write_data(tmp_path, n=10, seed=5)
    rc = cli.main(
        [
            "cluster", "--input", str(other), "--model", str(model_path),
            "--clusters", "2", "--k", "2",
        ]
    )
    assert rc == 2


def test_regress_flow(tmp_path):
    rc = cli.main(
        [
            "simulate", "--scenario", "regression", "--n", "25",
            "--j-low", "6", "--j-high", "10",
            "--out-prefix", str(tmp_path / "rg"),
        ]
    )
    assert rc == 0
    model_path = _fit_model(tmp_path, tmp_path / "rg_data.csv")
    out = tmp_path / "regress.json"
    rc = cli.main(
        [
            "regress", "--model", str(model_path),
            "--z-input", str(tmp_path / "rg_z.csv"), "--output", str(out),
        ]
    )
    assert rc == 0
    obj = json.loads(out.read_text())
    assert obj["schema"] == "fsvd-regress/1"


def test_regress_bad_z_header_exit_2(tmp_path):
    data = _write_data(tmp_path)
    model_path = _fit_model(tmp_path, data)
    z = tmp_path / "z.csv"
    z.write_text("id,response\n0,1.0\n")
    rc = cli.main(["regress", "--model", str(model_path), "--z-input", str(z)])
    assert rc == 2


def test_regress_missing_subject_exit_2(tmp_path):
    data = _write_data(tmp_path)
    model_path = _fit_model(tmp_path, data)
    z = tmp_path / "z.csv"
    z.write_text("subject_id,z\n0,1.0\n")
    rc = cli.main(["regress", "--model", str(model_path), "--z-input", str(z)])
    assert rc == 2


def test_factor_command(tmp_path):
    data = _write_data(tmp_path)
    model_path = _fit_model(tmp_path, data)
    out = tmp_path / "factor.json"
    rc = cli.main(
        ["factor", "--model", str(model_path), "--k", "2", "--output", str(out)]
    )
    assert rc == 0
    obj = json.loads(out.read_text())
    assert obj["schema"] == "fsvd-factor/1"
    L = np.array(obj["loading"])
    np.testing.assert_allclose(L.T @ L, np.eye(2), atol=1e-10)


def test_factor_too_many_components_exit_3(tmp_path):
    data = _write_data(tmp_path)
    model_path = _fit_model(tmp_path, data)
    rc = cli.main(["factor", "--model", str(model_path), "--k", "9"])
    assert rc == 3


def test_bench_small_run(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    rc = cli.main(
        [
            "bench", "--scenario", "completion_hetero", "--n-list", "10",
            "--j-specs", "5-9", "--replicates", "2",
            "--methods", "fsvd,spline", "--out", str(out),
        ]
    )
    assert rc == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0].startswith("scenario,")
    assert any(",spline," in l for l in lines[1:])
    assert capsys.readouterr().out  # table printed


def test_bench_unknown_scenario_exit_2():
    rc = cli.main(
        ["bench", "--scenario", "nope", "--n-list", "10", "--j-specs", "5-9"]
    )
    assert rc == 2


def test_bench_unknown_method_exit_2():
    rc = cli.main(
        [
            "bench", "--scenario", "completion_hetero", "--n-list", "10",
            "--j-specs", "5-9", "--methods", "magic",
        ]
    )
    assert rc == 2
