"""Tests for the acceptance registry and measurement logic."""

import math

import pytest

from hamflow.acceptance import (
    Criterion,
    Measurement,
    available_criteria,
    run_acceptance,
    run_criterion,
    select_criteria,
)
from hamflow.errors import AcceptanceFilterError, FocalTimeError


def test_registry_lists_every_criterion() -> None:
    """Test the acceptance suite registers all named checks."""
    expected = {
        "flat_curvature",
        "mechanical_curvature",
        "constant_curvature",
        "deformation_scaling",
        "frame_lemmas",
        "riccati",
        "bochner",
        "comparison",
        "mcp",
        "heat_flow",
        "entropy_flow",
        "transport",
        "harmonicity",
    }
    assert set(available_criteria()) == expected, f"Unexpected criteria {available_criteria()}"


@pytest.mark.parametrize(
    "measurement,factor,threshold",
    [
        (Measurement("upper", 1.0, 1e-6), 10.0, 1e-5),
        (Measurement("exact", 0.0, 0.0), 10.0, 0.0),
        (Measurement("order", 1.0, 1.8, ">="), 2.0, 0.9),
        (Measurement("slack", 0.0, -1e-6, ">="), 10.0, -1e-5),
    ],
)
def test_tolerance_scaling(measurement: Measurement, factor: float, threshold: float) -> None:
    """Test thresholds only ever loosen."""
    assert measurement.scaled(factor).threshold == pytest.approx(threshold), measurement.name


def test_measurement_pass_logic() -> None:
    """Test both comparisons and NaN values."""
    assert Measurement("a", 1e-7, 1e-6).passed, "below an upper bound"
    assert not Measurement("b", 1e-5, 1e-6).passed, "above an upper bound"
    assert Measurement("c", 2.0, 1.8, ">=").passed, "above a lower bound"
    assert not Measurement("d", math.nan, 1.0).passed, "NaN never passes"


def test_select_criteria() -> None:
    """Test substring selection and the unknown-filter error."""
    assert [c.name for c in select_criteria("curvature")] == [
        "flat_curvature",
        "mechanical_curvature",
        "constant_curvature",
    ], "substring match keeps registry order"
    assert len(select_criteria(None)) == len(available_criteria()), "no filter selects everything"
    with pytest.raises(AcceptanceFilterError, match="Available"):
        select_criteria("does-not-exist")


def test_run_criterion_records_errors() -> None:
    """Test a failing check is reported instead of raised."""

    def _broken():
        raise FocalTimeError("past model focal time")

    result = run_criterion(Criterion("broken", "always fails", 1.0, _broken))
    assert not result.passed, "errored criteria fail"
    assert result.error.startswith("FocalTimeError"), f"Unexpected error {result.error}"


def test_run_acceptance_flat() -> None:
    """Test the flat curvature criterion passes end to end."""
    (result,) = run_acceptance("flat_curvature")
    assert result.passed, f"flat curvature failed: {result.measurements} {result.error}"
    assert result.runtime > 0, "runtime recorded"
