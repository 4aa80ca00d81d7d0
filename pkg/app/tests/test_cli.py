import json

import pandas as pd
import pytest

from app.harness import cli
from app.harness.orchestrator import SPLITS
from app.harness.results import RESULT_COLUMNS
from app.simulation.system import load_dataset_csv
from app.utils.errors import NumericalError

SMALL = {
    "trials": 2,
    "n_train": 60,
    "n_cal_upstream": 40,
    "n_cal_downstream": 40,
    "n_cal_end2end": 40,
    "n_test": 150,
    "n_aci_stream": 40,
    "alphas": [0.5, 0.9],
    "m": 6,
    "l": 3,
    "n_estimators": 4,
    "k_clusters": 3,
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_run_writes_result_rows(tmp_path, config_file):
    """Test that run exits 0 and writes the documented columns."""
    out = tmp_path / "run.csv"
    assert cli.main(["run", "--config", str(config_file), "--out", str(out)]) == cli.EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(RESULT_COLUMNS)
    assert len(lines) == 1 + 2 * 5 * 2


def test_run_output_is_byte_identical(tmp_path, config_file):
    """Test that repeated runs, sequential or concurrent, write the same bytes."""
    outputs = []
    for i, workers in enumerate(["1", "1", "4"]):
        out = tmp_path / f"run_{i}.csv"
        code = cli.main(["run", "--config", str(config_file), "--workers", workers, "--out", str(out)])
        assert code == cli.EXIT_OK
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]


def test_flags_override_config_file(tmp_path, config_file):
    """Test that command-line flags take precedence over the JSON file."""
    out = tmp_path / "run.csv"
    args = ["run", "--config", str(config_file), "--trials", "1", "--methods", "set_level", "--out", str(out)]
    assert cli.main(args) == cli.EXIT_OK
    frame = pd.read_csv(out)
    assert frame["method"].unique().tolist() == ["set_level"]
    assert frame["trial"].unique().tolist() == [0]


def test_report_summarizes_runs(tmp_path, config_file):
    """Test the mean/std report over trials."""
    results = tmp_path / "run.csv"
    cli.main(["run", "--config", str(config_file), "--methods", "end2end,set_level", "--out", str(results)])
    assert cli.main(["report", str(results)]) == cli.EXIT_OK
    report = pd.read_csv(tmp_path / "run_report.csv")
    assert len(report) == 2 * 2
    assert report["trials"].tolist() == [2, 2, 2, 2]
    assert {"coverage_mean", "coverage_std", "avg_width_finite_mean", "finite_fraction_mean"} <= set(report.columns)


def test_sweep_tags_axis(tmp_path, config_file):
    """Test that sweep rows carry the axis name and value."""
    out = tmp_path / "sweep.csv"
    args = [
        "sweep", "--config", str(config_file), "--trials", "1", "--methods", "set_level",
        "--axis", "noise_std", "--values", "0.5,2", "--out", str(out),
    ]
    assert cli.main(args) == cli.EXIT_OK
    frame = pd.read_csv(out)
    assert frame["axis_name"].unique().tolist() == ["noise_std"]
    assert frame["axis_value"].tolist() == [0.5, 0.5, 2.0, 2.0]


def test_verbose_run_writes_cluster_diagnostics(tmp_path, config_file):
    """Test the per-cluster diagnostics file written next to the results."""
    out = tmp_path / "run.csv"
    args = ["run", "--config", str(config_file), "--methods", "cluster_level", "--verbose", "--out", str(out)]
    assert cli.main(args) == cli.EXIT_OK
    diagnostics = pd.read_csv(tmp_path / "run_clusters.csv")
    assert len(diagnostics) == 2 * 2 * 3
    assert set(diagnostics["fallback"].unique()) <= {0, 1}


@pytest.mark.parametrize(
    "extra",
    [
        ["--alphas", "0.5,1.5"],
        ["--trials", "0"],
        ["--methods", "magic"],
        ["--k-clusters", "500"],
    ],
)
def test_bad_configuration_exits_2(tmp_path, config_file, extra):
    """Test the configuration error exit code."""
    out = tmp_path / "run.csv"
    assert cli.main(["run", "--config", str(config_file), "--out", str(out), *extra]) == cli.EXIT_CONFIG
    assert not out.exists()


@pytest.mark.parametrize("k_clusters", [0, "many", -3])
def test_bad_cluster_count_in_config_file_exits_2(tmp_path, k_clusters):
    """Test that an invalid k_clusters in the config file is a configuration error."""
    path = tmp_path / "config.json"
    path.write_text(json.dumps({**SMALL, "k_clusters": k_clusters}))
    out = tmp_path / "run.csv"
    assert cli.main(["run", "--config", str(path), "--out", str(out)]) == cli.EXIT_CONFIG
    assert not out.exists()


def test_missing_inputs_exit_2(tmp_path):
    """Test that unreadable config and result files are configuration errors."""
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG
    assert cli.main(["report", str(tmp_path / "missing.csv")]) == cli.EXIT_CONFIG


def test_simulate_writes_every_split(tmp_path, config_file):
    """Test that simulate writes one loadable CSV per split."""
    out_dir = tmp_path / "trial"
    assert cli.main(["simulate", "--config", str(config_file), "--out", str(out_dir)]) == cli.EXIT_OK
    for name in SPLITS:
        ds = load_dataset_csv(out_dir / f"{name}.csv")
        assert ds.X.shape[1] == SMALL["m"]
        assert ds.Y.shape[1] == SMALL["l"]
    assert load_dataset_csv(out_dir / "test.csv").n == SMALL["n_test"]


def test_numerical_failure_exits_3(tmp_path, config_file, monkeypatch):
    """Test the numerical failure exit code."""

    def fail(*args, **kwargs):
        raise NumericalError("g_hat returned non-finite values")

    monkeypatch.setattr(cli, "materialize_trial", fail)
    code = cli.main(["simulate", "--config", str(config_file), "--out", str(tmp_path / "trial")])
    assert code == cli.EXIT_NUMERICAL
