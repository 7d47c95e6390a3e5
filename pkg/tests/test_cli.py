"""Tests for the hamflow CLI."""

import json
from pathlib import Path
from typing import Any, Callable, Dict

import pytest

HEAT = {
    "name": "heat",
    "experiment": "heat",
    "hamiltonian": {"name": "euclidean", "params": {"n": 1}},
    "grid": {"shape": [16], "T": 0.001},
}


def test_list(run_cli: Callable[..., Dict[str, Any]]) -> None:
    """Test --list prints every criterion."""
    result = run_cli("--list")
    assert result["exit_code"] == 0, f"Expected exit code 0, got {result['exit_code']}"
    assert "=== Acceptance Criteria ===" in result["stdout"], "section header"
    assert "flat_curvature:" in result["stdout"], "criterion listed"


def test_schema(run_cli: Callable[..., Dict[str, Any]]) -> None:
    """Test --schema prints the config JSON schema."""
    result = run_cli("--schema")
    assert result["exit_code"] == 0, "schema exits cleanly"
    assert json.loads(result["stdout"])["title"] == "BatchConfig", "schema is JSON"


def test_filtered_acceptance(run_cli: Callable[..., Dict[str, Any]]) -> None:
    """Test a single passing criterion exits 0."""
    result = run_cli("--filter", "flat_curvature")
    assert result["exit_code"] == 0, f"Output: {result['stdout']} {result['stderr']}"
    assert "PASS flat_curvature" in result["stdout"], "criterion reported"
    assert "=== All 1 criteria passed ===" in result["stdout"], "summary line"


def test_unknown_filter(run_cli: Callable[..., Dict[str, Any]]) -> None:
    """Test an unmatched filter exits 2 with a JSON error listing the criteria."""
    result = run_cli("--filter", "no-such-criterion")
    assert result["exit_code"] == 2, f"Expected exit code 2, got {result['exit_code']}"
    error = json.loads(result["stderr"].strip().splitlines()[-1])
    assert error["error"] == "AcceptanceFilterError", f"Unexpected error {error}"
    assert "riccati" in error["messages"], "available criteria listed"


def test_invalid_config(run_cli: Callable[..., Dict[str, Any]], write_config: Callable[..., Path]) -> None:
    """Test a config with an unknown key exits 2."""
    path = write_config({"name": "x", "experiment": "heat", "grid": {"cells": 64}})
    result = run_cli("--config", str(path))
    assert result["exit_code"] == 2, f"Expected exit code 2, got {result['exit_code']}"
    error = json.loads(result["stderr"].strip().splitlines()[-1])
    assert error["error"] == "ConfigError", f"Unexpected error {error}"
    assert any("grid.cells" in m for m in error["messages"]), f"Unexpected messages {error['messages']}"


def test_missing_config(run_cli: Callable[..., Dict[str, Any]], tmp_path: Path) -> None:
    """Test a missing config file exits 2."""
    result = run_cli("--config", str(tmp_path / "missing.json"))
    assert result["exit_code"] == 2, "missing file is a config error"


def test_config_run_writes_artifacts(
    run_cli: Callable[..., Dict[str, Any]], write_config: Callable[..., Path], tmp_path: Path
) -> None:
    """Test a config run writes tables and a summary."""
    path = write_config(HEAT)
    out = tmp_path / "out"
    result = run_cli("--config", str(path), "--out", str(out))
    assert result["exit_code"] == 0, f"Output: {result['stdout']} {result['stderr']}"
    assert (out / "heat" / "heat.csv").exists(), "diagnostics written"
    assert json.loads((out / "heat" / "summary.json").read_text())["error"] is None, "summary written"
    assert "=== Experiments (1) ===" in result["stdout"], "experiment section"


def test_failed_experiment_exits_1(
    run_cli: Callable[..., Dict[str, Any]], write_config: Callable[..., Path], tmp_path: Path
) -> None:
    """Test a numerical failure inside an experiment exits 1."""
    path = write_config(
        {
            "name": "flat-vs-sphere",
            "experiment": "compare",
            "comparison": {"oracle": "trajectory", "K": 1.0, "T": 0.5, "samples": 20},
        }
    )
    result = run_cli("--config", str(path), "--out", str(tmp_path / "out"))
    assert result["exit_code"] == 1, f"Expected exit code 1, got {result['exit_code']}"
    error = json.loads(result["stderr"].strip().splitlines()[-1])
    assert error["error"] == "ExperimentError", f"Unexpected error {error}"


def test_out_dir_from_environment(
    run_cli: Callable[..., Dict[str, Any]],
    write_config: Callable[..., Path],
    tmp_path: Path,
    monkeypatch: pytest.MonkeyPatch,
) -> None:
    """Test HAMFLOW_OUT sets the default output directory."""
    out = tmp_path / "from-env"
    monkeypatch.setenv("HAMFLOW_OUT", str(out))
    result = run_cli("--config", str(write_config(HEAT)))
    assert result["exit_code"] == 0, f"Output: {result['stdout']} {result['stderr']}"
    assert (out / "heat" / "summary.json").exists(), "artifacts under HAMFLOW_OUT"


@pytest.mark.parametrize("args", [("--threads", "0"), ("--tolerance-scale", "0")])
def test_invalid_options(run_cli: Callable[..., Dict[str, Any]], args: tuple) -> None:
    """Test invalid numeric options exit 2."""
    result = run_cli("--filter", "flat_curvature", *args)
    assert result["exit_code"] == 2, f"Expected exit code 2 for {args}"
