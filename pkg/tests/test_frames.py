"""Tests for canonical frames and the curvature operator."""

import numpy as np
import pytest

from hamflow.errors import CoordinateFormulaError
from hamflow.flow import variational_flow
from hamflow.frames import (
    CurvatureRoute,
    canonical_frame,
    chain_rule_flow_derivative,
    curvature_coordinate_formula,
    curvature_report,
    flow_derivative_by_differences,
    fconv_scaling_check,
    gauge_uniqueness_drift,
    ricci,
    time_shift_defect,
    weighted_ricci,
    weighted_ricci_value,
)
from hamflow.hamiltonians import ChartHamiltonian, CotangentState, WeightField


def test_flat_curvature_vanishes(euclidean: ChartHamiltonian) -> None:
    """Test R = 0 for |alpha|^2 / 2."""
    report = curvature_report(euclidean, CotangentState([0.3, -0.2], [1.0, 0.5]))
    assert report.route is CurvatureRoute.FRAME_SECOND_DERIVATIVE, "default route"
    assert np.linalg.norm(report.R) <= 1e-7, f"flat R = {report.R}"


def test_zero_section_convention(mechanical: ChartHamiltonian) -> None:
    """Test Ric is reported as 0 on the zero section."""
    assert ricci(mechanical, CotangentState([0.5, 0.2], [0.0, 0.0])) == 0.0, "Ric(0) = 0"


def test_mechanical_curvature_both_routes(mechanical: ChartHamiltonian) -> None:
    """Test R = Hess Z for a natural mechanical Hamiltonian by both routes."""
    state = CotangentState([0.5, 0.2], [1.0, 0.3])
    expected = np.diag([1.0, 0.0])
    frame = curvature_report(mechanical, state)
    coordinate = curvature_coordinate_formula(mechanical, state)
    np.testing.assert_allclose(frame.R, expected, atol=1e-5)
    np.testing.assert_allclose(coordinate.R, expected, atol=1e-5)
    assert coordinate.route is CurvatureRoute.COORDINATE_FORMULA, "coordinate route tag"
    assert frame.symmetry_defect <= 1e-6, "R must be symmetric"


def test_flow_derivative_routes_agree(sphere: ChartHamiltonian) -> None:
    """Test the chain-rule derivative of H_x_alpha against differences along the flow."""
    state = CotangentState([0.3, 0.2], [0.4, 1.0])
    np.testing.assert_allclose(
        chain_rule_flow_derivative(sphere, state),
        flow_derivative_by_differences(sphere, state),
        atol=1e-6,
    )


def test_coordinate_formula_needs_adapted_coordinates(sphere: ChartHamiltonian) -> None:
    """Test that the coordinate route refuses a non-identity fiber Hessian."""
    with pytest.raises(CoordinateFormulaError, match="inapplicable"):
        curvature_coordinate_formula(sphere, CotangentState([0.3, 0.2], [0.4, 1.0]))


def test_constant_curvature(sphere, hyperbolic, make_unit_state) -> None:
    """Test Ric = +1 on the round sphere and -1 on the hyperbolic plane for unit covectors."""
    ric_sphere = ricci(sphere, make_unit_state(sphere, [0.3, 0.2], [0.4, 1.0]))
    ric_hyperbolic = ricci(hyperbolic, make_unit_state(hyperbolic, [0.0, 1.5], [1.0, 0.2]))
    assert ric_sphere == pytest.approx(1.0, abs=1e-4), f"sphere Ric {ric_sphere}"
    assert ric_hyperbolic == pytest.approx(-1.0, abs=1e-4), f"hyperbolic Ric {ric_hyperbolic}"


def test_ricci_is_quadratic_for_finsler(sphere: ChartHamiltonian) -> None:
    """Test Ric(c alpha) = c^2 Ric(alpha) for a 2-homogeneous Hamiltonian."""
    state = CotangentState([0.3, 0.2], [0.4, 1.0])
    doubled = CotangentState(state.x, 2.0 * state.alpha)
    assert ricci(sphere, doubled) == pytest.approx(4.0 * ricci(sphere, state), rel=1e-4), "quadratic scaling"


def test_weighted_ricci_gaussian(euclidean, make_unit_state) -> None:
    """Test Ric_N for the Gaussian weight on the plane."""
    weight = WeightField("(x0**2 + x1**2)/2", 2)
    state = make_unit_state(euclidean, [0.3, 0.1], [1.0, 0.0])
    assert weighted_ricci(euclidean, weight, state, np.inf) == pytest.approx(1.0, abs=1e-5), "Ric_inf"
    assert weighted_ricci(euclidean, weight, state, 4.0) == pytest.approx(1.0 - 0.09 / 2.0, abs=1e-5), "Ric_4"
    assert weighted_ricci(euclidean, weight, state, 2.0) == -np.inf, "Ric_n with psi' != 0"


def test_weighted_ricci_value_rejects_small_dimension() -> None:
    """Test N below the dimension is refused."""
    with pytest.raises(ValueError, match="below n"):
        weighted_ricci_value(0.0, 0.0, 0.0, 3, 2.0)


def test_frame_defects(mechanical: ChartHamiltonian) -> None:
    """Test the frame is orthonormal, symplectic and Lagrangian."""
    trajectory = variational_flow(mechanical, CotangentState([0.5, 0.2], [1.0, 0.3]), 1.0)
    bundle = canonical_frame(mechanical, trajectory)
    for key in ("orthonormality", "symplectic", "lagrangian", "orthogonality"):
        assert bundle.defects[key] <= 1e-6, f"{key} defect {bundle.defects[key]:.3e}"


def test_gauge_uniqueness(mechanical: ChartHamiltonian) -> None:
    """Test a rotated vertical basis differs by a constant orthogonal matrix."""
    drift = gauge_uniqueness_drift(mechanical, CotangentState([0.5, 0.2], [1.0, 0.3]), 1.0, seed=7)
    assert drift <= 1e-7, f"gauge drift {drift:.3e}"


def test_time_shift(mechanical: ChartHamiltonian) -> None:
    """Test R read at alpha(t) matches R from a frame started at alpha(t)."""
    defect = time_shift_defect(mechanical, CotangentState([0.5, 0.2], [1.0, 0.3]), 0.25)
    assert defect <= 1e-5, f"time shift defect {defect:.3e}"


@pytest.mark.parametrize("profile", ["t**2/2", "t**3/3"])
def test_deformation_scaling(sphere: ChartHamiltonian, profile: str) -> None:
    """Test Ric of h(F*) against (h'(F*)/F*)^2 Ric of the sphere."""
    check = fconv_scaling_check(sphere, profile, CotangentState([0.3, 0.2], [0.6, 0.9]))
    assert check.relative_defect <= 1e-4, f"relative defect {check.relative_defect:.3e}"
    if profile == "t**2/2":
        assert check.scale == pytest.approx(1.0), "the identity profile has unit scale"
