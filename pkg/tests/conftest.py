"""Pytest configuration and fixtures."""

import json
import math
from pathlib import Path
from typing import Any, Callable, Dict, List

import numpy as np
import pytest

from hamflow.cli import main
from hamflow.hamiltonians import ChartHamiltonian, CotangentState, builtin
from hamflow.heatgrid import GridField


@pytest.fixture(scope="session")
def euclidean() -> ChartHamiltonian:
    """Return H = |alpha|^2 / 2 on the plane."""
    return builtin("euclidean")


@pytest.fixture(scope="session")
def euclidean_line() -> ChartHamiltonian:
    """Return H = alpha^2 / 2 on the line."""
    return builtin("euclidean", {"n": 1})


@pytest.fixture(scope="session")
def mechanical() -> ChartHamiltonian:
    """Return the natural mechanical Hamiltonian |alpha|^2 / 2 + x0^2 / 2."""
    return builtin("mechanical", {"potential": "x0**2/2"})


@pytest.fixture(scope="session")
def sphere() -> ChartHamiltonian:
    """Return the unit round sphere in stereographic coordinates."""
    return builtin("sphere", {"chart": "stereographic"})


@pytest.fixture(scope="session")
def hyperbolic() -> ChartHamiltonian:
    """Return the upper half-plane model of curvature -1."""
    return builtin("hyperbolic")


@pytest.fixture(scope="session")
def p3() -> ChartHamiltonian:
    """Return the 3-homogeneous deformation |alpha|^3 / 3 on the plane."""
    return builtin("p_homogeneous", {"p": 3})


@pytest.fixture(scope="session")
def p3_line() -> ChartHamiltonian:
    """Return |alpha|^3 / 3 on the line."""
    return builtin("p_homogeneous", {"p": 3, "base": {"name": "euclidean", "params": {"n": 1}}})


@pytest.fixture()
def make_unit_state() -> Callable[..., CotangentState]:
    """Fixture building a covector rescaled to H = 1/2."""

    def _make_unit_state(H: ChartHamiltonian, x: List[float], direction: List[float]) -> CotangentState:
        alpha = np.asarray(direction, dtype=float)
        return CotangentState(x, alpha / math.sqrt(2.0 * H.value(x, alpha)))

    return _make_unit_state


@pytest.fixture()
def make_sine_field() -> Callable[..., GridField]:
    """Fixture building 1 + a sin(2 pi x + shift) on a unit torus."""

    def _make_sine_field(cells: int = 64, amplitude: float = 0.5, shift: float = 0.0) -> GridField:
        return GridField.on_torus(
            [cells], 1.0, lambda x: 1.0 + amplitude * np.sin(2.0 * np.pi * x + shift)
        )

    return _make_sine_field


@pytest.fixture()
def write_config(tmp_path: Path) -> Callable[[Any], Path]:
    """Fixture writing a JSON config into the test's temporary directory."""

    def _write_config(raw: Any, name: str = "config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(raw))
        return path

    return _write_config


@pytest.fixture()
def run_cli(capsys: pytest.CaptureFixture) -> Callable[..., Dict[str, Any]]:
    """Fixture to run the CLI with the given arguments."""

    def _run_cli(*args: str) -> Dict[str, Any]:
        """Run the CLI and return its exit code and captured streams."""
        exit_code = main(list(args))
        captured = capsys.readouterr()
        return {"exit_code": exit_code, "stdout": captured.out, "stderr": captured.err}

    return _run_cli
