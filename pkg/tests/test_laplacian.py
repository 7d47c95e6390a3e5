"""Tests for pointwise gradients, divergences, Hessians and Laplacians."""

import numpy as np
import pytest

from hamflow.errors import CriticalPointError
from hamflow.hamiltonians import ChartHamiltonian, WeightField
from hamflow.laplacian import (
    divergence_m,
    duality_gap,
    gradient,
    hessian_H,
    integrated_form,
    laplacian_H_unweighted,
    laplacian_Hm,
    scalar_field,
    vector_field,
    weight_drift,
)

GAUSSIAN = WeightField("(x0**2 + x1**2)/2", 2)


def test_euclidean_hessian_is_classical(euclidean: ChartHamiltonian) -> None:
    """Test Hess and Laplacian of a quadratic for |alpha|^2 / 2."""
    u = scalar_field("x0**2 + x0*x1 + 2*x1**2", euclidean)
    x = [0.4, 0.3]
    np.testing.assert_allclose(hessian_H(euclidean, u, x), [[2.0, 1.0], [1.0, 4.0]], atol=1e-12)
    assert laplacian_H_unweighted(euclidean, u, x) == pytest.approx(6.0), "trace of the Hessian"
    assert laplacian_Hm(euclidean, None, u, x) == pytest.approx(6.0), "unweighted Laplacian"


def test_gaussian_weighted_laplacian(euclidean: ChartHamiltonian) -> None:
    """Test Delta_m u = n - |x|^2 for u = |x|^2 / 2 and the Gaussian weight."""
    u = scalar_field("(x0**2 + x1**2)/2", euclidean)
    assert laplacian_Hm(euclidean, GAUSSIAN, u, [1.0, 0.5]) == pytest.approx(0.75), "2 - 1.25"


def test_laplacian_at_critical_point(euclidean: ChartHamiltonian, p3: ChartHamiltonian) -> None:
    """Test the Laplacian is defined at du = 0 only when H is C^2 on the zero section."""
    assert laplacian_Hm(euclidean, None, scalar_field("(x0**2 + x1**2)/2", euclidean), [0.0, 0.0]) == pytest.approx(2.0), (
        "smooth Hamiltonian at a critical point"
    )
    with pytest.raises(CriticalPointError, match="critical point"):
        laplacian_Hm(p3, None, scalar_field("(x0**2 + x1**2)/2", p3), [0.0, 0.0])
    with pytest.raises(CriticalPointError):
        hessian_H(euclidean, scalar_field("(x0**2 + x1**2)/2", euclidean), [0.0, 0.0])


def test_gradient_flags_critical_points(p3: ChartHamiltonian) -> None:
    """Test grad u = H_alpha(du) and the degenerate flag."""
    u = scalar_field("x0**2/2 + x1", p3)
    critical = gradient(p3, scalar_field("(x0**2 + x1**2)/2", p3), [0.0, 0.0])
    assert critical.degenerate and not np.any(critical.vector), "zero gradient at a critical point"
    result = gradient(p3, u, [2.0, 0.0])
    # du = (2, 1), H_alpha = |du| du
    np.testing.assert_allclose(result.vector, np.sqrt(5.0) * np.array([2.0, 1.0]))


def test_divergence(euclidean: ChartHamiltonian) -> None:
    """Test div_m of the position field with and without weight."""
    V = vector_field(["x0", "x1"], euclidean)
    assert divergence_m(V, None, [0.3, 0.4]) == pytest.approx(2.0), "Lebesgue divergence"
    assert divergence_m(V, GAUSSIAN, [0.3, 0.4]) == pytest.approx(2.0 - 0.25), "Gaussian divergence"
    with pytest.raises(ValueError, match="components"):
        vector_field(["x0"], euclidean)


def test_duality_gap_vanishes(p3: ChartHamiltonian) -> None:
    """Test du(grad u) = H(du) + L(grad u)."""
    u = scalar_field("x0 + x1**2", p3)
    assert duality_gap(p3, u, [0.2, 0.7]) == pytest.approx(0.0, abs=1e-10), "Fenchel equality"


def test_weight_drift(euclidean: ChartHamiltonian) -> None:
    """Test (psi o eta)'(0) = grad varsigma . du for a flat fiber metric."""
    drift = weight_drift(euclidean, GAUSSIAN, [1.0, 0.5], np.array([1.0, 2.0]))
    assert drift == pytest.approx(2.0), "x . p = 1 + 1"


def test_integrated_form_is_negative(euclidean_line: ChartHamiltonian) -> None:
    """Test int u Delta u = -int |du|^2 on a periodic grid."""
    u = scalar_field("sin(2*pi*x0)", euclidean_line)
    cells = 64
    points = ((np.arange(cells) + 0.5) / cells)[:, None]
    form, energy = integrated_form(euclidean_line, None, u, points, 1.0 / cells)
    assert energy == pytest.approx(2.0 * np.pi**2, rel=1e-10), "int (2 pi cos)^2 over the unit circle"
    assert form == pytest.approx(-energy, rel=1e-10), "integration by parts"
