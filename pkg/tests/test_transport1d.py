"""Tests for monotone transport on the line and the entropy inequalities."""

import numpy as np
import pytest

from hamflow.errors import CDFInversionError, DensityError, TranslationInvarianceError
from hamflow.hamiltonians import ChartHamiltonian
from hamflow.transport1d import (
    DensityProfile,
    Lagrangian1D,
    change_of_variables_check,
    cost_cT,
    discrete_monotone_cost,
    discrete_optimal_cost,
    displacement_interpolation,
    entropy,
    entropy_derivative_check,
    fisher_information,
    gaussian_profile,
    gaussian_psi,
    k_convexity_check,
    lebesgue_psi,
    monotone_transport,
    talagrand_hwi_check,
    transport_costs,
    uniform_edges,
)

QUADRATIC = Lagrangian1D.from_expression("v**2/2")


@pytest.fixture(scope="module")
def shifted_plan():
    """Monotone plan from N(1, 1) to N(0, 1) against the Gaussian reference."""
    return monotone_transport(gaussian_profile(1.0), gaussian_profile(0.0), QUADRATIC)


def test_cost_cT() -> None:
    """Test c_T(x, y) = T L((y - x) / T)."""
    assert float(cost_cT(QUADRATIC, 0.0, 2.0, 2.0)) == pytest.approx(1.0), "2 * (1^2 / 2)"
    with pytest.raises(ValueError, match="positive"):
        cost_cT(QUADRATIC, 0.0, 1.0, 0.0)


def test_lagrangian_needs_translation_invariance(mechanical: ChartHamiltonian) -> None:
    """Test position-dependent inputs are refused by the 1D closed forms."""
    with pytest.raises(TranslationInvarianceError, match="translation invariance"):
        Lagrangian1D.from_expression("v**2/2 + x")
    with pytest.raises(TranslationInvarianceError):
        Lagrangian1D.from_hamiltonian(mechanical)


def test_lagrangian_from_hamiltonian(p3_line: ChartHamiltonian) -> None:
    """Test the conjugate of |alpha|^3 / 3 is (2/3) |v|^(3/2)."""
    L = Lagrangian1D.from_hamiltonian(p3_line)
    np.testing.assert_allclose(L(np.array([4.0, -1.0])), [16.0 / 3.0, 2.0 / 3.0], rtol=1e-10)
    np.testing.assert_allclose(L.tau(np.array([4.0])), [2.0], rtol=1e-10)


def test_density_validation() -> None:
    """Test invalid profiles list every problem."""
    edges = uniform_edges(0.0, 3.0, 3)
    with pytest.raises(DensityError) as excinfo:
        DensityProfile(edges, [0.7, -0.1, 0.2], [1.0, 1.0, 1.0])
    message = str(excinfo.value)
    assert "nonnegative" in message and "total mass" in message, f"Unexpected message {message}"
    with pytest.raises(DensityError, match="absolutely continuous"):
        DensityProfile(edges, [0.5, 0.5, 0.0], [1.0, 0.0, 1.0])


def test_reference_has_zero_entropy() -> None:
    """Test Ent_m(m) = 0 for the normalized Gaussian reference."""
    m = DensityProfile.reference(uniform_edges(), gaussian_psi)
    assert m.reference_total == pytest.approx(1.0, abs=1e-10), "Gaussian reference is a probability"
    assert entropy(m) == pytest.approx(0.0, abs=1e-10), "relative entropy of m to itself"


def test_monotone_transport_of_shifted_gaussian(shifted_plan) -> None:
    """Test the monotone map between equal-variance Gaussians is a translation."""
    bulk = np.abs(shifted_plan.source.centers - 1.0) < 3.0
    np.testing.assert_allclose(shifted_plan.velocity[bulk], -1.0, atol=1e-3)
    assert shifted_plan.cost == pytest.approx(0.5, abs=1e-4), "W2^2 / 2 for a unit shift"
    assert shifted_plan.independent_cost() > shifted_plan.cost, "the product coupling is worse"


def test_atoms_are_refused() -> None:
    """Test CDF inversion against a target with a heavy cell."""
    coarse = uniform_edges(-2.0, 2.0, 10)
    atom = gaussian_profile(0.0, 0.01, coarse, lebesgue_psi)
    with pytest.raises(CDFInversionError, match="ill-posed"):
        monotone_transport(gaussian_profile(0.0, 1.0, coarse, lebesgue_psi), atom, QUADRATIC)


@pytest.mark.parametrize("expr", ["v**2/2", "Abs(v)**3/3"])
def test_monotone_coupling_is_optimal(expr: str) -> None:
    """Test the north-west corner coupling against linear programming."""
    coarse = uniform_edges(-2.0, 2.0, 10)
    mu = gaussian_profile(-0.5, 0.7, coarse, lebesgue_psi)
    nu = gaussian_profile(0.8, 0.5, coarse, lebesgue_psi)
    L = Lagrangian1D.from_expression(expr)
    assert discrete_monotone_cost(mu, nu, L) == pytest.approx(discrete_optimal_cost(mu, nu, L), abs=1e-8), expr


def test_discrete_oracle_size_limit() -> None:
    """Test the LP oracle is limited to small instances."""
    edges = uniform_edges(-2.0, 2.0, 13)
    mu = gaussian_profile(0.0, 1.0, edges, lebesgue_psi)
    with pytest.raises(ValueError, match="12 x 12"):
        discrete_optimal_cost(mu, mu, QUADRATIC)


def test_change_of_variables(shifted_plan) -> None:
    """Test int f(rho_t) dm = int f(rho_0 / D_t) D_t dm with f(r) = r^2."""
    lhs, rhs, _ = change_of_variables_check(shifted_plan, 0.5, lambda r: r**2)
    assert lhs == pytest.approx(rhs, abs=1e-8), "discrete Jacobian identity"
    with pytest.raises(ValueError, match="Interpolation time"):
        displacement_interpolation(shifted_plan, 1.5)


def test_talagrand_hwi_equality(euclidean_line: ChartHamiltonian) -> None:
    """Test Talagrand and HWI are equalities for Gaussian shifts at K = 2 and slack at K = 1."""
    mu = gaussian_profile(1.0)
    m = DensityProfile.reference(uniform_edges(), gaussian_psi)
    equality = talagrand_hwi_check(euclidean_line, QUADRATIC, mu, m, 1.0, 2.0)
    loose = talagrand_hwi_check(euclidean_line, QUADRATIC, mu, m, 1.0, 1.0)
    assert abs(equality.talagrand_slack) <= 1e-6, f"Talagrand gap {equality.talagrand_slack:.3e}"
    assert abs(equality.hwi_slack) <= 1e-6, f"HWI gap {equality.hwi_slack:.3e}"
    assert loose.talagrand_slack >= 0 and loose.hwi_slack >= 0, "K = 1 leaves slack"
    assert [row[0] for row in loose.rows()] == ["talagrand", "hwi", "hwi_homogeneous", "log_sobolev"], (
        "2-homogeneous H reports the sharper forms"
    )


def test_talagrand_needs_probability_reference(euclidean_line: ChartHamiltonian) -> None:
    """Test Lebesgue measure on the window is refused as reference."""
    edges = uniform_edges()
    flat = DensityProfile.reference(edges, lebesgue_psi)
    with pytest.raises(DensityError, match="reference measure"):
        talagrand_hwi_check(euclidean_line, QUADRATIC, gaussian_profile(0.0, 1.0, edges, lebesgue_psi), flat)
    with pytest.raises(ValueError, match="K > 0"):
        talagrand_hwi_check(
            euclidean_line, QUADRATIC, gaussian_profile(1.0), DensityProfile.reference(edges, gaussian_psi), K=0.0
        )


def test_k_convexity_and_entropy_derivative(euclidean_line: ChartHamiltonian, shifted_plan) -> None:
    """Test K = 2 convexity of Ent along the shift and the first-order entropy bound."""
    assert k_convexity_check(euclidean_line, shifted_plan, 2.0) <= 1e-5, "K-convexity defect"
    derivative = entropy_derivative_check(shifted_plan)
    assert derivative.slack >= -1e-6, f"entropy derivative slack {derivative.slack:.3e}"


def test_p_homogeneous_cost_ratio(p3_line: ChartHamiltonian) -> None:
    """Test C^H / C^L = 1 / (p - 1) for H = |alpha|^3 / 3."""
    edges = uniform_edges(-6.0, 6.0, 1024)
    L = Lagrangian1D.from_hamiltonian(p3_line)
    plan = monotone_transport(
        gaussian_profile(0.0, 1.0, edges, lebesgue_psi), gaussian_profile(1.5, 0.6, edges, lebesgue_psi), L
    )
    cost_L, cost_H = transport_costs(p3_line, L, plan)
    assert cost_H / cost_L == pytest.approx(0.5, rel=1e-6), "ratio q / p"


def test_fisher_needs_positive_density(euclidean_line: ChartHamiltonian) -> None:
    """Test a density vanishing inside its support is refused."""
    edges = uniform_edges(0.0, 10.0, 10)
    mu = DensityProfile(edges, [0.5, 0.0, 0.5] + [0.0] * 7, np.ones(10))
    with pytest.raises(DensityError, match="touches 0"):
        fisher_information(euclidean_line, mu)
