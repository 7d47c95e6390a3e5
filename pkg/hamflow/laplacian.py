"""Pointwise gradient, divergence, weighted Laplacian and Hessian of a scalar field."""

import logging
from typing import Any, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from .errors import CriticalPointError
from .hamiltonians import ChartHamiltonian, WeightField, lagrangian
from .jets import ScalarField

logger = logging.getLogger(__name__)


class Gradient(NamedTuple):
    vector: np.ndarray
    degenerate: bool


def scalar_field(expr: Any, H: ChartHamiltonian) -> ScalarField:
    """A function u(x) on the chart of H, from a string or sympy expression."""
    if isinstance(expr, str):
        return ScalarField.from_string(expr, H.x_symbols)
    return ScalarField(expr, H.x_symbols)


def vector_field(exprs: Sequence[Any], H: ChartHamiltonian) -> Tuple[ScalarField, ...]:
    """Components V^i(x) of a vector field on the chart of H."""
    if len(exprs) != H.n:
        raise ValueError(f"Expected {H.n} components, got {len(exprs)}")
    return tuple(scalar_field(expr, H) for expr in exprs)


def _weight(weight: Optional[WeightField], n: int) -> WeightField:
    return weight if weight is not None else WeightField.lebesgue(n)


def gradient(H: ChartHamiltonian, u: ScalarField, x: Sequence[float]) -> Gradient:
    """The gradient vector tau*(du) = H_alpha(x, du_x); flagged degenerate at critical points."""
    p = u.gradient(x)
    if not np.any(p):
        return Gradient(np.zeros(H.n), True)
    return Gradient(H.momentum_gradient(x, p), False)


def divergence_m(V: Sequence[ScalarField], weight: Optional[WeightField], x: Sequence[float]) -> float:
    """sum_i dV^i/dx^i - V^i d(varsigma)/dx^i."""
    weight = _weight(weight, len(V))
    weight_gradient = weight.gradient(x)
    total = 0.0
    for i, component in enumerate(V):
        total += component.gradient(x)[i] - component.value(x) * weight_gradient[i]
    return float(total)


def fiber_flow_derivative(H: ChartHamiltonian, x: Sequence[float], p: np.ndarray) -> np.ndarray:
    """[H_alpha_alpha o alpha]'(0) along the flow through (x, p), from third jets."""
    n = H.n
    z = np.concatenate([x, p])
    gradient = H.gradient_z(z)
    third = H.third_z(z)
    zdot = np.concatenate([gradient[n:], -gradient[:n]])
    return np.einsum("ijm,m->ij", third[n:, n:, :], zdot)


def laplacian_from_data(
    H: ChartHamiltonian,
    weight: Optional[WeightField],
    x: Sequence[float],
    p: np.ndarray,
    U: np.ndarray,
) -> float:
    """
    Weighted Laplacian from the point data (x, du_x, u_xx).

    Raises:
        CriticalPointError: If du_x = 0 and H is not C^2 on the zero section
    """
    if not np.any(p) and not H.zero_section_smooth:
        raise CriticalPointError(f"Laplacian undefined at critical point x={list(x)}")
    n = H.n
    weight = _weight(weight, n)
    hessian = H.hessian_z(np.concatenate([x, p]))
    momentum = H.momentum_gradient(x, p)
    mixed_trace = float(np.trace(hessian[:n, n:]))
    return mixed_trace + float(np.sum(hessian[n:, n:] * U)) - float(momentum @ weight.gradient(x))


def laplacian_Hm(
    H: ChartHamiltonian, weight: Optional[WeightField], u: ScalarField, x: Sequence[float]
) -> float:
    """Delta^H_m u(x) = div_m(grad u)."""
    return laplacian_from_data(H, weight, x, u.gradient(x), u.hessian(x))


def hessian_from_data(H: ChartHamiltonian, x: Sequence[float], p: np.ndarray, U: np.ndarray) -> np.ndarray:
    """
    Hessian of u in covariables normalized so that H_alpha_alpha(du_x) = I.

    With S the lower Cholesky factor of H_alpha_alpha, M the mixed block
    H_{x^i alpha_j} and G' the flow derivative of H_alpha_alpha, the result is
    S^T U S + (S^T M S^{-T} + its transpose - S^{-1} G' S^{-T}) / 2,
    which is the classical Hessian for the Euclidean Hamiltonian.

    Raises:
        CriticalPointError: If du_x = 0
    """
    if not np.any(p):
        raise CriticalPointError(f"Hessian requires noncritical point, du = 0 at x={list(x)}")
    n = H.n
    hessian = H.hessian_z(np.concatenate([x, p]))
    S = np.linalg.cholesky(hessian[n:, n:])
    S_inv = solve_triangular(S, np.eye(n), lower=True)
    mixed = S.T @ hessian[:n, n:] @ S_inv.T
    drift = S_inv @ fiber_flow_derivative(H, x, p) @ S_inv.T
    result = S.T @ U @ S + 0.5 * (mixed + mixed.T - drift)
    return 0.5 * (result + result.T)


def hessian_H(H: ChartHamiltonian, u: ScalarField, x: Sequence[float]) -> np.ndarray:
    return hessian_from_data(H, x, u.gradient(x), u.hessian(x))


def laplacian_H_unweighted(H: ChartHamiltonian, u: ScalarField, x: Sequence[float]) -> float:
    """Delta^H u, the trace of the Hessian."""
    return float(np.trace(hessian_H(H, u, x)))


def weight_drift(
    H: ChartHamiltonian, weight: Optional[WeightField], x: Sequence[float], p: np.ndarray
) -> float:
    """(psi o eta)'(0) for the flow through du_x, psi = varsigma - log det H_alpha_alpha / 2."""
    weight = _weight(weight, H.n)
    momentum = H.momentum_gradient(x, p)
    metric = H.fiber_hessian(x, p)
    drift = fiber_flow_derivative(H, x, p)
    return float(weight.gradient(x) @ momentum) - 0.5 * float(np.trace(np.linalg.solve(metric, drift)))


def duality_gap(H: ChartHamiltonian, u: ScalarField, x: Sequence[float]) -> float:
    """du(grad u) - H(du) - L(grad u), zero by the Fenchel equality."""
    p = u.gradient(x)
    vector = gradient(H, u, x).vector
    return float(p @ vector) - H.value(x, p) - lagrangian(H, x, vector)


def integrated_form(
    H: ChartHamiltonian,
    weight: Optional[WeightField],
    u: ScalarField,
    points: np.ndarray,
    cell_volume: float,
) -> Tuple[float, float]:
    """
    Grid quadratures of u Delta^H_m u dm and of du(grad u) dm.

    On a periodic grid the first is minus the second up to quadrature error,
    so it is negative unless u is constant.
    """
    weight = _weight(weight, H.n)
    form = 0.0
    energy = 0.0
    for x in np.atleast_2d(points):
        density = np.exp(-weight.value(x)) * cell_volume
        p = u.gradient(x)
        form += u.value(x) * laplacian_Hm(H, weight, u, x) * density
        if np.any(p):
            energy += float(p @ H.momentum_gradient(x, p)) * density
    logger.debug(f"integrated form {form:.6e}, energy {energy:.6e} over {len(points)} points")
    return form, energy
