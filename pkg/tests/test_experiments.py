"""Tests for experiment runners and their artifacts."""

import csv
import json
from pathlib import Path

import pytest

from hamflow.config import ExperimentKind, parse_config
from hamflow.errors import ConfigError
from hamflow.experiments import ExperimentResult, judge_metrics, run_batch, run_experiment, write_csv, write_plot_data

LINE = {"name": "euclidean", "params": {"n": 1}}


def _experiment(raw: dict):
    return parse_config(raw).experiments[0]


def _read_csv(path: Path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_writers(tmp_path: Path) -> None:
    """Test the CSV header row and the commented plot-data header."""
    path = write_csv(tmp_path / "out" / "table.csv", ["t", "value"], [[0.0, 1], [0.5, True]])
    assert _read_csv(path) == [["t", "value"], ["0", "1"], ["0.5", "true"]], "cells are formatted"
    plot = write_plot_data(tmp_path / "plot.dat", [0.0, 1.0], [2.0, 3.0], ("t", "energy"))
    assert plot.read_text().splitlines() == ["# t energy", "0 2", "1 3"], "two columns under a comment"


def test_curvature_experiment(tmp_path: Path) -> None:
    """Test both curvature routes are written for a mechanical Hamiltonian."""
    config = _experiment(
        {
            "name": "mech",
            "experiment": "curvature",
            "hamiltonian": {"name": "mechanical", "params": {"potential": "x0**2/2"}},
            "trajectory": {"x": [0.5, 0.2], "alpha": [1.0, 0.3]},
        }
    )
    result = run_experiment(config, tmp_path)
    assert result.ok, f"experiment failed: {result.error}"
    rows = _read_csv(tmp_path / "mech" / "curvature.csv")
    assert rows[0] == ["route", "ric", "ric_N", "R_00", "R_01", "R_10", "R_11"], f"Unexpected header {rows[0]}"
    assert [row[0] for row in rows[1:]] == ["frame_second_derivative", "coordinate_formula"], "both routes"
    assert result.metrics["route_gap"] <= 1e-5, "routes agree"
    summary = json.loads((tmp_path / "mech" / "summary.json").read_text())
    assert summary["name"] == "mech" and summary["error"] is None, f"Unexpected summary {summary}"


def test_heat_experiment_artifacts(tmp_path: Path) -> None:
    """Test diagnostics, snapshots and the contraction table."""
    config = _experiment(
        {
            "name": "heat",
            "experiment": "heat",
            "hamiltonian": LINE,
            "grid": {"shape": [32], "T": 0.002, "second_initial": "1 + sin(2*pi*x0 + 1)/3", "snapshot_every": 10},
        }
    )
    result = run_experiment(config, tmp_path)
    assert result.ok, f"experiment failed: {result.error}"
    out = tmp_path / "heat"
    assert _read_csv(out / "heat.csv")[0] == ["t", "mass", "energy", "entropy", "slope"], "diagnostic header"
    assert _read_csv(out / "contraction.csv")[0] == ["t", "l2_distance"], "contraction header"
    assert (out / "snapshots" / "u_0000.bin").exists(), "initial snapshot"
    assert (out / "snapshots" / "u_0000.json").exists(), "snapshot sidecar"
    assert result.metrics["mass_drift"] <= 1e-12, "mass conserved"
    assert result.metrics["distance_increase"] <= 1e-14, "contraction"


def test_constant_initial_data(tmp_path: Path) -> None:
    """Test a constant field stays put with zero energy."""
    config = _experiment({"name": "flat", "experiment": "heat", "hamiltonian": LINE, "grid": {"shape": [16], "initial": "2", "T": 0.001}})
    result = run_experiment(config, tmp_path)
    assert result.metrics["final_energy"] == 0.0, "constant has no energy"
    assert result.metrics["mass_drift"] == 0.0, "nothing moves"


def test_runs_are_deterministic(tmp_path: Path) -> None:
    """Test two runs of the same config write identical tables."""
    raw = {"name": "same", "experiment": "heat", "hamiltonian": LINE, "grid": {"shape": [16], "T": 0.002}}
    run_experiment(_experiment(raw), tmp_path / "first")
    run_experiment(_experiment(raw), tmp_path / "second")
    first = (tmp_path / "first" / "same" / "heat.csv").read_text()
    second = (tmp_path / "second" / "same" / "heat.csv").read_text()
    assert first == second, "heat.csv differs between runs"


def test_entropyflow_header(tmp_path: Path) -> None:
    """Test the entropy flow table names its energy column after the Dirichlet energy."""
    config = _experiment({"name": "ent", "experiment": "entropyflow", "hamiltonian": LINE, "grid": {"shape": [16], "T": 0.001}})
    result = run_experiment(config, tmp_path)
    assert result.ok, f"experiment failed: {result.error}"
    rows = _read_csv(tmp_path / "ent" / "entropyflow.csv")
    assert rows[0] == ["t", "mass", "dirichlet_energy", "entropy", "slope", "dissipation"], f"Unexpected header {rows[0]}"
    assert all(len(row) == 6 for row in rows[1:]), "one cell per column"


def test_tight_tolerance_fails_the_run(tmp_path: Path) -> None:
    """Test a finished run whose residuals exceed the configured tolerance is reported as failed."""
    raw = {"name": "riccati", "experiment": "riccati"}
    assert run_experiment(_experiment(raw), tmp_path / "default").ok, "default tolerance holds"
    result = run_experiment(_experiment({**raw, "tolerance": 1e-300}), tmp_path / "tight")
    assert not result.ok and result.error.startswith("tolerance exceeded"), f"Unexpected error {result.error}"
    assert "residual" in result.error, "failing metric named"
    summary = json.loads((tmp_path / "tight" / "riccati" / "summary.json").read_text())
    assert summary["error"] == result.error and summary["metrics"], "metrics kept alongside the error"
    loosened = run_experiment(_experiment({**raw, "tolerance": 1e-300}), tmp_path / "scaled", tolerance_scale=1e300)
    assert loosened.ok, f"scaled tolerance holds: {loosened.error}"


def test_judge_metrics() -> None:
    """Test defects are bounded above and slacks below, skipping absent metrics."""
    result = ExperimentResult("t", ExperimentKind.TRANSPORT, metrics={"k_convexity_defect": -0.5, "dent_slack": -1e-6})
    assert judge_metrics(result, 1e-5) is None, "within tolerance"
    result.metrics["talagrand_slack"] = -1e-3
    assert judge_metrics(result, 1e-5) == "tolerance exceeded: talagrand_slack = -1.000e-03 < -1.000e-05"
    result.metrics["k_convexity_defect"] = float("nan")
    assert "k_convexity_defect = nan" in judge_metrics(result, 1e-5), "NaN never passes"
    assert judge_metrics(ExperimentResult("m", ExperimentKind.MMS, metrics={"observed_order": 0.1}), 1e-5) is None


def test_compare_model(tmp_path: Path) -> None:
    """Test the comparison table against the (K, N) model."""
    config = _experiment(
        {"name": "model", "experiment": "compare", "comparison": {"K": 1.0, "N": 2, "n": 2, "T": 1.0, "samples": 50}}
    )
    result = run_experiment(config, tmp_path)
    rows = _read_csv(tmp_path / "model" / "compare.csv")
    assert rows[0] == ["t", "delta_m", "s_KN_bound", "violation"], f"Unexpected header {rows[0]}"
    assert len(rows) == 51, "one row per sample"
    assert abs(result.metrics["worst_violation"]) <= 1e-6, "model is an equality"
    assert (tmp_path / "model" / "delta_m.dat").read_text().startswith("# t delta_m"), "plot data header"


def test_failures_are_captured(tmp_path: Path) -> None:
    """Test a numerical failure is recorded in the result and summary."""
    config = _experiment(
        {
            "name": "flat-vs-sphere",
            "experiment": "compare",
            "trajectory": {"x": [0.0, 0.0], "alpha": [1.0, 0.0]},
            "comparison": {"oracle": "trajectory", "K": 1.0, "N": 2, "T": 0.5, "samples": 20},
        }
    )
    result = run_experiment(config, tmp_path)
    assert not result.ok and "Ric_N >= K fails" in result.error, f"Unexpected error {result.error}"
    summary = json.loads((tmp_path / "flat-vs-sphere" / "summary.json").read_text())
    assert summary["error"] == result.error, "error recorded in the summary"


def test_dimension_mismatch_is_a_config_error(tmp_path: Path) -> None:
    """Test transport on the plane is refused as a configuration problem."""
    with pytest.raises(ConfigError, match="transport runs on the line"):
        run_experiment(_experiment({"name": "plane", "experiment": "transport"}), tmp_path)


def test_transport_experiment(tmp_path: Path) -> None:
    """Test the inequality table for the quadratic Hamiltonian."""
    config = _experiment(
        {
            "name": "transport",
            "experiment": "transport",
            "hamiltonian": LINE,
            "transport": {"cells": 2048, "K": 1.0},
        }
    )
    result = run_experiment(config, tmp_path)
    assert result.ok, f"experiment failed: {result.error}"
    rows = _read_csv(tmp_path / "transport" / "transport.csv")
    assert rows[0] == ["fixture", "inequality", "lhs", "rhs", "slack"], f"Unexpected header {rows[0]}"
    assert "talagrand" in [row[1] for row in rows[1:]], "Talagrand row present"
    assert result.metrics["talagrand_slack"] >= 0, "K = 1 leaves slack"


def test_run_batch(tmp_path: Path) -> None:
    """Test a batch runs every experiment in parallel."""
    batch = parse_config(
        {
            "experiments": [
                {"name": f"heat-{k}", "experiment": "heat", "hamiltonian": LINE, "grid": {"shape": [16], "T": 0.001}}
                for k in range(3)
            ]
        }
    )
    results = run_batch(batch, tmp_path, threads=2)
    assert [r.name for r in results] == ["heat-0", "heat-1", "heat-2"], "results keep batch order"
    assert all(r.ok for r in results), "all experiments succeed"
