"""Tests for symbolic jets and curve derivatives."""

import math

import numpy as np
import pytest
import sympy as sp

from hamflow.errors import SmoothDomainError, StepSizeError
from hamflow.jets import SampledCurve, ScalarField, curve_derivatives, jet_eval

X = sp.symbols("x0:2")


def test_scalar_field_derivatives() -> None:
    """Test gradient, Hessian and third derivative of a cubic."""
    f = ScalarField.from_string("x0**2*x1 + x1**3/3", X)
    point = [1.5, -0.5]
    np.testing.assert_allclose(f.gradient(point), [2 * 1.5 * -0.5, 1.5**2 + 0.25])
    np.testing.assert_allclose(f.hessian(point), [[-1.0, 3.0], [3.0, -1.0]])
    third = f.third(point)
    assert third[0, 0, 1] == pytest.approx(2.0), "d3f/dx0 dx0 dx1 should be 2"
    assert third[1, 1, 1] == pytest.approx(2.0), "d3f/dx1^3 should be 2"


def test_value_on_broadcasts_constants() -> None:
    """Test that constant components are broadcast to the grid shape."""
    f = ScalarField("x0 + 2", X)
    xs, ys = np.meshgrid(np.arange(3.0), np.arange(4.0), indexing="ij")
    gradient = f.gradient_on(xs, ys)
    assert gradient.shape == (2, 3, 4), f"Unexpected gradient shape {gradient.shape}"
    np.testing.assert_allclose(gradient[0], 1.0)
    np.testing.assert_allclose(gradient[1], 0.0)
    np.testing.assert_allclose(f.value_on(xs, ys), xs + 2)


def test_undeclared_symbols_rejected() -> None:
    """Test that an expression in unknown symbols is refused."""
    with pytest.raises(ValueError, match="undeclared"):
        ScalarField.from_string("x0 + y", X)


def test_arithmetic_composes_expressions() -> None:
    """Test field arithmetic stays on the same variables."""
    f = ScalarField("x0", X)
    g = (2 * f + 1) ** 2
    assert g.value([1.0, 0.0]) == pytest.approx(9.0), "(2 x0 + 1)^2 at x0=1"
    assert f.apply(sp.exp).value([0.0, 3.0]) == pytest.approx(1.0), "exp(x0) at x0=0"


def test_jet_eval_orders() -> None:
    """Test that unrequested slots stay empty."""
    f = ScalarField("x0**2 + x1**2", X)
    jet = jet_eval(f, [1.0, 2.0], order=2)
    assert jet.value == pytest.approx(5.0), "value of |x|^2"
    assert jet.third is None, "third derivative was not requested"
    with pytest.raises(ValueError):
        jet_eval(f, [1.0, 2.0], order=4)


def test_jet_eval_outside_smooth_domain() -> None:
    """Test that non-finite derivatives raise SmoothDomainError."""
    f = ScalarField("log(x0) + x1", X)
    with np.errstate(all="ignore"), pytest.raises(SmoothDomainError, match="smooth domain"):
        jet_eval(f, [0.0, 1.0])


def test_curve_derivatives_of_sine() -> None:
    """Test extrapolated central differences against cos and -sin."""
    result = curve_derivatives(math.sin, 0.3, order=2)
    assert result.first == pytest.approx(math.cos(0.3), abs=1e-10), "first derivative of sin"
    assert result.second == pytest.approx(-math.sin(0.3), abs=1e-7), "second derivative of sin"


def test_curve_derivatives_of_vector_curve() -> None:
    """Test that array-valued curves are differentiated componentwise."""
    result = curve_derivatives(lambda t: np.array([t**2, t**3]), 1.0, order=2)
    np.testing.assert_allclose(result.first, [2.0, 3.0], atol=1e-9)
    np.testing.assert_allclose(result.second, [2.0, 6.0], atol=1e-6)


def test_curve_derivatives_tolerance() -> None:
    """Test that an unreachable tolerance raises StepSizeError."""
    with pytest.raises(StepSizeError, match="step size unresolvable"):
        curve_derivatives(math.exp, 0.0, order=2, h0=0.2, tol=1e-30)


def test_sampled_curve_lookup() -> None:
    """Test grid lookup and the off-grid failure."""
    times = np.linspace(0.0, 1.0, 11)
    curve = SampledCurve(times, times**2)
    assert curve(0.3) == pytest.approx(0.09), "lookup at a grid time"
    with pytest.raises(StepSizeError):
        curve(0.35)
