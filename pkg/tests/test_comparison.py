"""Tests for model functions, Riccati transport, Bochner and the comparison checks."""

import math

import numpy as np
import pytest

from hamflow.comparison import (
    ModelComparison,
    bochner_residual,
    hj_transport,
    laplacian_comparison_check,
    mcp_ratio_check,
    riccati_residual,
    s_KN,
    s_KN_bound,
)
from hamflow.errors import ComparisonHypothesisError, CriticalPointError, FocalTimeError
from hamflow.hamiltonians import ChartHamiltonian, WeightField
from hamflow.laplacian import scalar_field


def test_model_functions() -> None:
    """Test s_KN in the three curvature regimes."""
    assert s_KN(1.0, 1.0, 0.5) == pytest.approx(math.sin(0.5)), "spherical model"
    assert s_KN(0.0, 3.0, 0.5) == pytest.approx(0.5), "flat model"
    assert s_KN(-1.0, 1.0, 0.5) == pytest.approx(math.sinh(0.5)), "hyperbolic model"
    assert s_KN_bound(0.0, 2.0, 0.5) == pytest.approx(4.0), "N / t in the flat case"
    assert ModelComparison(-1.0, 2.0).focal_time == math.inf, "no focal time for K <= 0"


def test_focal_time() -> None:
    """Test evaluation past pi sqrt(N/K) is refused."""
    with pytest.raises(FocalTimeError, match="focal time"):
        s_KN(1.0, 1.0, math.pi)
    with pytest.raises(ValueError):
        s_KN(1.0, 1.0, -0.1)


@pytest.mark.parametrize("K,N", [(1.0, 2), (0.0, 2), (-1.0, 3)])
def test_model_equality(K: float, N: int) -> None:
    """Test Delta = N s'/s exactly when R = (K/N) I."""
    report = laplacian_comparison_check(lambda t: (K / N) * np.eye(N), K, N, 2.0, N, samples=100)
    gap = float(np.max(np.abs(report.delta - report.bound)))
    assert gap <= 1e-6, f"model gap {gap:.3e}"
    assert report.refinement_gap <= 1e-6, "cone seed must not depend on t0"


def test_flat_radial_cone() -> None:
    """Test the seed projected off the radial direction gives Delta = (n - 1) / t."""
    report = laplacian_comparison_check(
        lambda t: np.zeros((2, 2)), 0.0, 2, 2.0, 2, seed_projector=np.diag([0.0, 1.0]), samples=100
    )
    np.testing.assert_allclose(report.delta, 1.0 / report.times, atol=1e-6)
    assert report.worst_violation <= 0.0, "1/t stays below 2/t"


def test_comparison_hypothesis() -> None:
    """Test Ric_N < K is refused."""
    with pytest.raises(ComparisonHypothesisError, match="Ric_N >= K fails"):
        laplacian_comparison_check(lambda t: np.zeros((2, 2)), 1.0, 2, 1.0, 2, samples=50)


def test_mcp_flat_ratio() -> None:
    """Test t / s_{0,1}(t) is constant and the trace bound agrees."""
    verdict = mcp_ratio_check(lambda t: math.log(t), 0.0, 1.0, np.linspace(0.1, 3.0, 60))
    assert verdict.non_increasing and verdict.trace_bound_holds, "flat radial ratio is constant"
    assert abs(verdict.worst_increase) <= 1e-8, f"ratio drift {verdict.worst_increase:.3e}"


def test_mcp_detects_growth() -> None:
    """Test an increasing ratio fails both formulations."""
    verdict = mcp_ratio_check(
        lambda t: 3.0 * math.log(t), 0.0, 2.0, np.linspace(0.1, 3.0, 30), derivative=lambda t: 3.0 / t
    )
    assert not verdict.non_increasing, "t^3 / t^2 increases"
    assert not verdict.trace_bound_holds, "3/t exceeds 2/t"
    assert verdict.equivalent, "the two formulations agree"


def test_mcp_grid_must_be_positive() -> None:
    """Test the ratio grid excludes t = 0."""
    with pytest.raises(ValueError, match="positive"):
        mcp_ratio_check(lambda t: 0.0, 0.0, 1.0, [0.0, 1.0])


def test_riccati_transport_closed_form(euclidean: ChartHamiltonian) -> None:
    """Test Hess u_t = I / (1 + t) for u = |x|^2 / 2 on the plane."""
    u = scalar_field("(x0**2 + x1**2)/2", euclidean)
    transport = hj_transport(euclidean, u, [0.5, 0.2], 0.5)
    final = transport.states[-1]
    np.testing.assert_allclose(final.hess, np.eye(2) / (1.0 + final.t), atol=1e-8)
    assert final.trace_lap == pytest.approx(2.0 / (1.0 + final.t), abs=1e-6), "Delta u_t"


def test_riccati_residuals(mechanical: ChartHamiltonian) -> None:
    """Test the matrix and trace Riccati identities along a characteristic."""
    u = scalar_field("x0 + x1/2", mechanical)
    residual = riccati_residual(mechanical, WeightField.lebesgue(2), u, [0.5, 0.2], 0.5)
    assert residual.matrix <= 1e-4, f"matrix residual {residual.matrix:.3e}"
    assert residual.trace <= 1e-4, f"trace residual {residual.trace:.3e}"
    assert residual.riccati_gap <= 1e-5, f"pair vs characteristic gap {residual.riccati_gap:.3e}"


def test_hj_transport_needs_noncritical_start(euclidean: ChartHamiltonian) -> None:
    """Test du_{x0} = 0 is refused."""
    with pytest.raises(CriticalPointError):
        hj_transport(euclidean, scalar_field("(x0**2 + x1**2)/2", euclidean), [0.0, 0.0], 0.5)


def test_bochner_euclidean(euclidean: ChartHamiltonian) -> None:
    """Test Bochner-Weitzenbock for a quadratic and its dimensional slack."""
    u = scalar_field("x0**2 + x0*x1 + 2*x1**2", euclidean)
    report = bochner_residual(euclidean, None, u, [0.4, 0.3])
    assert report.defect <= 1e-6, f"Bochner defect {report.defect:.3e}"
    # |Hess|^2 = 22 and Delta = 6
    assert report.lhs == pytest.approx(22.0, abs=1e-6), "lhs is |Hess u|^2 in flat space"
    assert report.nbw_slack[2.0] == pytest.approx(22.0 - 18.0, abs=1e-6), "slack at N = n"
    assert report.nbw_slack[3.0] == pytest.approx(22.0 - 12.0, abs=1e-6), "slack at N = n + 1"


def test_bochner_gaussian(euclidean: ChartHamiltonian) -> None:
    """Test the weighted identity picks up Hess varsigma."""
    weight = WeightField("(x0**2 + x1**2)/2", 2)
    report = bochner_residual(euclidean, weight, scalar_field("(x0**2 + x1**2)/2", euclidean), [0.4, 0.3])
    assert report.defect <= 1e-5, f"weighted Bochner defect {report.defect:.3e}"
    assert sorted(report.nbw_slack) == [2.0, 3.0, 4.0, 1e6], f"Unexpected dimensions {sorted(report.nbw_slack)}"
    assert all(slack >= -1e-6 for slack in report.nbw_slack.values()), f"negative slack {report.nbw_slack}"
    assert report.nbw_slack[3.0] >= -1e-8, f"slack at N = n + 1 is {report.nbw_slack[3.0]:.3e}"


def test_bochner_critical_point(euclidean: ChartHamiltonian) -> None:
    """Test the identity needs du != 0."""
    with pytest.raises(CriticalPointError):
        bochner_residual(euclidean, None, scalar_field("(x0**2 + x1**2)/2", euclidean), [0.0, 0.0])
