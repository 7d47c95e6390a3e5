"""Canonical frames along Hamiltonian trajectories and the curvature they define."""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm, solve_triangular
from scipy.stats import ortho_group

from .errors import (
    ConvexityError,
    CoordinateFormulaError,
    CurvatureError,
    FrameError,
)
from .flow import (
    DEFAULT_STEPS_PER_UNIT,
    FlowTrajectory,
    canonical_symplectic,
    hamiltonian_flow,
    rk4,
    variational_flow,
)
from .hamiltonians import ChartHamiltonian, CotangentState, WeightField, deform, parse_profile
from .jets import SampledCurve, curve_derivatives

logger = logging.getLogger(__name__)

FD_STRIDE = 8
# curve_derivatives reaches 4 h0 = 4 * FD_STRIDE steps away from the center
MARGIN_STEPS = 4 * FD_STRIDE + 2
FRAME_TOL = 1e-6
EXTRACTION_TOL = 1e-5
ADAPTED_TOL = 1e-8
PSI_ZERO_TOL = 1e-8

Gauge = Callable[[float], Tuple[np.ndarray, np.ndarray]]


class CurvatureRoute(str, Enum):
    FRAME_SECOND_DERIVATIVE = "frame_second_derivative"
    COORDINATE_FORMULA = "coordinate_formula"


@dataclass(frozen=True)
class FrameBundle:
    """Canonical frame data on the grid of a trajectory; frame vectors are columns."""

    trajectory: FlowTrajectory
    xi: np.ndarray
    xi_dot: np.ndarray
    ebar: np.ndarray
    ebar_dot: np.ndarray
    Omega: np.ndarray
    O: np.ndarray
    e: np.ndarray
    edot: np.ndarray
    defects: Dict[str, float] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.trajectory.n

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times


@dataclass(frozen=True)
class CurvatureReport:
    R: np.ndarray
    ric: float
    route: CurvatureRoute
    N: Optional[float] = None
    ric_N: Optional[float] = None
    psi_derivs: Tuple[float, float] = (0.0, 0.0)
    symmetry_defect: float = 0.0
    vertical_residual: float = 0.0


def _lower_factor(hessian: np.ndarray, where: str) -> np.ndarray:
    try:
        factor = np.linalg.cholesky(hessian)
    except np.linalg.LinAlgError:
        raise ConvexityError(f"strong convexity violated along trajectory at {where}")
    if not np.all(np.isfinite(factor)):
        raise ConvexityError(f"strong convexity violated along trajectory at {where}")
    return factor


def _vertical_point(H: ChartHamiltonian, z: np.ndarray, where: str = "") -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """xi = S^{-T} and its flow derivative at z, plus the Hessian of H."""
    n = H.n
    gradient = H.gradient_z(z)
    hessian = H.hessian_z(z)
    third = H.third_z(z)
    S = _lower_factor(hessian[n:, n:], where or f"z={z}")
    xi = solve_triangular(S, np.eye(n), lower=True).T

    zdot = np.concatenate([gradient[n:], -gradient[:n]])
    G_dot = np.einsum("ijm,m->ij", third[n:, n:, :], zdot)
    P = solve_triangular(S, solve_triangular(S, G_dot, lower=True).T, lower=True)
    lower_half = np.tril(P) - 0.5 * np.diag(np.diag(P))
    xi_dot = -xi @ lower_half.T
    return xi, xi_dot, hessian


def vertical_frame(H: ChartHamiltonian, trajectory: FlowTrajectory) -> np.ndarray:
    """
    The H_alpha_alpha-orthonormal vertical frame chol(H_alpha_alpha)^{-T} along a trajectory.

    Raises:
        ConvexityError: If H_alpha_alpha is not positive-definite at some sample
    """
    frames = []
    for k, z in enumerate(trajectory.z):
        S = _lower_factor(H.fiber_hessian(z[: H.n], z[H.n :]), f"t={trajectory.times[k]:.6g}")
        frames.append(solve_triangular(S, np.eye(H.n), lower=True).T)
    return np.array(frames)


def _frame_point(
    H: ChartHamiltonian,
    z: np.ndarray,
    J: np.ndarray,
    Q: Optional[np.ndarray] = None,
    Q_dot: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, ...]:
    n = H.n
    xi, xi_dot, hessian = _vertical_point(H, z)
    if Q is not None:
        xi, xi_dot = xi @ Q, xi_dot @ Q + xi @ Q_dot

    DX = np.block([[hessian[n:, :n], hessian[n:, n:]], [-hessian[:n, :n], -hessian[:n, n:]]])
    zero = np.zeros((n, n))
    vertical = np.vstack([zero, xi])
    vertical_dot = np.vstack([zero, xi_dot])
    ebar = np.linalg.solve(J, vertical)
    ebar_dot = np.linalg.solve(J, vertical_dot - DX @ vertical)
    Omega = ebar_dot.T @ canonical_symplectic(n) @ ebar_dot
    return xi, xi_dot, ebar, ebar_dot, Omega


def canonical_frame(
    H: ChartHamiltonian,
    trajectory: FlowTrajectory,
    gauge: Optional[Gauge] = None,
    tol: float = FRAME_TOL,
) -> FrameBundle:
    """
    Build the canonical frame e = O ebar along a trajectory with jacobians.

    O solves O' = O Omega / 2, O(0) = I, integrated with the flow and its
    linearization on the trajectory's own grid. ``gauge`` optionally rotates
    the vertical frame by Q(t), returning (Q, Q').

    Raises:
        FrameError: If a frame invariant defect exceeds ``tol``
    """
    if trajectory.jacobians is None:
        raise FrameError("canonical frame construction failed: trajectory has no jacobians")
    n = H.n
    size = 2 * n

    def gauge_at(t: float) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        return gauge(t) if gauge is not None else (None, None)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        z = y[:size]
        J = y[size : size + size * size].reshape(size, size)
        O = y[size + size * size :].reshape(n, n)
        Q, Q_dot = gauge_at(t)
        *_, Omega = _frame_point(H, z, J, Q, Q_dot)
        dJ = H.vector_field_jacobian(z) @ J
        dO = 0.5 * O @ Omega
        return np.concatenate([H.vector_field(z), dJ.ravel(), dO.ravel()])

    y0 = np.concatenate([trajectory.z[0], np.eye(size).ravel(), np.eye(n).ravel()])
    steps = len(trajectory.times) - 1
    _, ys = rk4(rhs, y0, float(trajectory.times[0]), trajectory.dt, steps)
    Os = ys[:, size + size * size :].reshape(-1, n, n)

    omega_can = canonical_symplectic(n)
    columns = {name: [] for name in ("xi", "xi_dot", "ebar", "ebar_dot", "Omega", "e", "edot")}
    defects = {"orthonormality": 0.0, "symplectic": 0.0, "lagrangian": 0.0, "orthogonality": 0.0}
    for k, t in enumerate(trajectory.times):
        z = trajectory.z[k]
        Q, Q_dot = gauge_at(t)
        xi, xi_dot, ebar, ebar_dot, Omega = _frame_point(H, z, trajectory.jacobians[k], Q, Q_dot)
        O = Os[k]
        O_dot = 0.5 * O @ Omega
        e = ebar @ O.T
        edot = ebar_dot @ O.T + ebar @ O_dot.T

        metric = H.fiber_hessian(z[:n], z[n:])
        defects["orthonormality"] = max(
            defects["orthonormality"], float(np.max(np.abs(xi.T @ metric @ xi - np.eye(n))))
        )
        defects["symplectic"] = max(
            defects["symplectic"], float(np.max(np.abs(edot.T @ omega_can @ e - np.eye(n))))
        )
        defects["lagrangian"] = max(
            defects["lagrangian"], float(np.max(np.abs(e.T @ omega_can @ e)))
        )
        defects["orthogonality"] = max(
            defects["orthogonality"], float(np.max(np.abs(O.T @ O - np.eye(n))))
        )
        for name, value in zip(columns, (xi, xi_dot, ebar, ebar_dot, Omega, e, edot)):
            columns[name].append(value)

    name, worst = max(defects.items(), key=lambda item: item[1])
    if worst > tol:
        raise FrameError(f"canonical frame construction failed: {name} defect {worst:.3e}")
    logger.debug(f"canonical frame defects: {defects}")

    arrays = {name: np.array(values) for name, values in columns.items()}
    return FrameBundle(trajectory=trajectory, O=Os, defects=defects, **arrays)


def frame_around(
    H: ChartHamiltonian,
    state: CotangentState,
    before: int = MARGIN_STEPS,
    after: int = MARGIN_STEPS,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
    gauge: Optional[Gauge] = None,
) -> Tuple[FrameBundle, int]:
    """Canonical frame on a trajectory through ``state``; returns the bundle and the index of ``state``."""
    dt = 1.0 / steps_per_unit
    start = state
    if before > 0:
        start = hamiltonian_flow(H, state, -before * dt, steps=before).final
    trajectory = variational_flow(H, start, (before + after) * dt, steps=before + after)
    bundle = canonical_frame(H, trajectory, gauge)
    return bundle, trajectory.index_of(before * dt)


def _extract_curvature(bundle: FrameBundle, index: int) -> Tuple[np.ndarray, float]:
    """R in the frame e(t_index) from -e'' = R e, and the vertical residual."""
    n = bundle.n
    reach = 4 * FD_STRIDE
    if index < reach or index > len(bundle.times) - 1 - reach:
        raise CurvatureError(
            f"curvature extraction needs {reach} samples on each side of index {index}"
        )
    curve = SampledCurve(bundle.times, bundle.edot)
    h0 = FD_STRIDE * abs(bundle.trajectory.dt)
    e_ddot = curve_derivatives(curve, bundle.times[index], order=1, h0=h0).first
    basis = np.hstack([bundle.e[index], bundle.edot[index]])
    coefficients = np.linalg.solve(basis, -e_ddot)
    R = coefficients[:n].T
    residual = float(np.max(np.abs(coefficients[n:])))
    if not np.all(np.isfinite(R)) or residual > EXTRACTION_TOL * (1.0 + np.max(np.abs(R))):
        raise CurvatureError(
            f"curvature extraction ill-conditioned at t={bundle.times[index]:.6g}: "
            f"vertical residual {residual:.3e}"
        )
    return R, residual


def curvature_operator(H: ChartHamiltonian, bundle: FrameBundle, t: float) -> CurvatureReport:
    """R^t in the canonical frame e(t), recovered from -e''_i = sum_j R_ij e_j."""
    index = bundle.trajectory.index_of(t)
    R, residual = _extract_curvature(bundle, index)
    return CurvatureReport(
        R=R,
        ric=float(np.trace(R)),
        route=CurvatureRoute.FRAME_SECOND_DERIVATIVE,
        symmetry_defect=float(np.max(np.abs(R - R.T))),
        vertical_residual=residual,
    )


def curvature_along(bundle: FrameBundle, indices: Sequence[int]) -> np.ndarray:
    """R(t) in the canonical frame at each requested index."""
    return np.array([_extract_curvature(bundle, k)[0] for k in indices])


def to_vertical_gauge(bundle: FrameBundle, index: int, R: np.ndarray) -> np.ndarray:
    """Express a curvature matrix in the triangular vertical frame at alpha(t_index)."""
    O = bundle.O[index]
    return O.T @ R @ O


def psi_along(H: ChartHamiltonian, weight: Optional[WeightField], trajectory: FlowTrajectory) -> np.ndarray:
    """psi(t) = varsigma(eta(t)) - log det H_alpha_alpha(alpha(t)) / 2."""
    n = H.n
    values = np.empty(len(trajectory.times))
    for k, z in enumerate(trajectory.z):
        sign, logdet = np.linalg.slogdet(H.fiber_hessian(z[:n], z[n:]))
        if sign <= 0:
            raise ConvexityError(f"strong convexity violated along trajectory at t={trajectory.times[k]:.6g}")
        base = weight.value(z[:n]) if weight is not None else 0.0
        values[k] = base - 0.5 * logdet
    return values


def psi_derivatives(trajectory: FlowTrajectory, psi: np.ndarray, index: int) -> Tuple[float, float]:
    curve = SampledCurve(trajectory.times, psi)
    h0 = FD_STRIDE * abs(trajectory.dt)
    result = curve_derivatives(curve, trajectory.times[index], order=2, h0=h0)
    return float(result.first), float(result.second)


def weighted_ricci_value(ric: float, psi_first: float, psi_second: float, n: int, N: float) -> float:
    """Ric_N from Ric and the derivatives of psi along the trajectory."""
    if N < n:
        raise ValueError(f"Effective dimension N={N} is below n={n}")
    if np.isinf(N):
        return ric + psi_second
    if N == n:
        if abs(psi_first) > PSI_ZERO_TOL:
            return -np.inf
        return ric + psi_second
    return ric + psi_second - psi_first**2 / (N - n)


def curvature_report(
    H: ChartHamiltonian,
    state: CotangentState,
    weight: Optional[WeightField] = None,
    N: Optional[float] = None,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
) -> CurvatureReport:
    """Curvature at a state in the triangular vertical gauge, with Ric and optionally Ric_N."""
    if state.on_zero_section:
        # Ric vanishes on the zero section by convention
        zero = np.zeros((H.n, H.n))
        return CurvatureReport(R=zero, ric=0.0, route=CurvatureRoute.FRAME_SECOND_DERIVATIVE, N=N, ric_N=0.0 if N else None)

    bundle, index = frame_around(H, state, steps_per_unit=steps_per_unit)
    R_e, residual = _extract_curvature(bundle, index)
    R = to_vertical_gauge(bundle, index, R_e)
    ric = float(np.trace(R))

    psi_derivs = (0.0, 0.0)
    ric_N = None
    if weight is not None or N is not None:
        psi = psi_along(H, weight, bundle.trajectory)
        psi_derivs = psi_derivatives(bundle.trajectory, psi, index)
        ric_N = weighted_ricci_value(ric, *psi_derivs, H.n, np.inf if N is None else N)
    return CurvatureReport(
        R=R,
        ric=ric,
        route=CurvatureRoute.FRAME_SECOND_DERIVATIVE,
        N=N,
        ric_N=ric_N,
        psi_derivs=psi_derivs,
        symmetry_defect=float(np.max(np.abs(R - R.T))),
        vertical_residual=residual,
    )


def ricci(H: ChartHamiltonian, state: CotangentState) -> float:
    """Ric^H(alpha), 0 on the zero section."""
    return curvature_report(H, state).ric


def weighted_ricci(H: ChartHamiltonian, weight: WeightField, state: CotangentState, N: float) -> float:
    """Ric_N(alpha) for N in [n, inf]; may be -inf when N = n."""
    report = curvature_report(H, state, weight=weight, N=N)
    return float(report.ric_N)


# coordinate route


def chain_rule_flow_derivative(H: ChartHamiltonian, state: CotangentState) -> np.ndarray:
    """d/dt H_{x^i alpha_j}(alpha(t)) at t = 0 from third jets."""
    n = H.n
    z = state.z
    gradient = H.gradient_z(z)
    third = H.third_z(z)
    zdot = np.concatenate([gradient[n:], -gradient[:n]])
    return np.einsum("ijm,m->ij", third[:n, n:, :], zdot)


def flow_derivative_by_differences(
    H: ChartHamiltonian,
    state: CotangentState,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
) -> np.ndarray:
    """The same derivative from Richardson differences along the computed flow."""
    n = H.n
    dt = 1.0 / steps_per_unit
    start = hamiltonian_flow(H, state, -MARGIN_STEPS * dt, steps=MARGIN_STEPS).final
    trajectory = hamiltonian_flow(H, start, 2 * MARGIN_STEPS * dt, steps=2 * MARGIN_STEPS)
    mixed = np.array([H.hessian_z(z)[:n, n:] for z in trajectory.z])
    curve = SampledCurve(trajectory.times, mixed)
    t = trajectory.times[trajectory.index_of(MARGIN_STEPS * dt)]
    return curve_derivatives(curve, t, order=1, h0=FD_STRIDE * dt).first


def curvature_coordinate_formula(
    H: ChartHamiltonian,
    state: CotangentState,
    flow_derivative_oracle: Optional[Callable[[ChartHamiltonian, CotangentState], np.ndarray]] = None,
) -> CurvatureReport:
    """
    Curvature from the coordinate formula, valid where H_alpha_alpha = I along the trajectory.

    Raises:
        CoordinateFormulaError: If H_alpha_alpha departs from the identity
    """
    n = H.n
    nearby = [state]
    for t in (-0.05, 0.05):
        nearby.append(hamiltonian_flow(H, state, t).final)
    for point in nearby:
        deviation = float(np.max(np.abs(H.fiber_hessian(point.x, point.alpha) - np.eye(n))))
        if deviation > ADAPTED_TOL:
            raise CoordinateFormulaError(
                f"coordinate formula inapplicable: |H_alpha_alpha - I| = {deviation:.3e} at x={point.x}"
            )

    oracle = flow_derivative_oracle or chain_rule_flow_derivative
    hessian = H.hessian_z(state.z)
    M = hessian[:n, n:]
    M_dot = oracle(H, state)
    A = M - M.T
    R = 0.25 * A @ A.T - 0.5 * (M_dot + M_dot.T) - M @ M.T + hessian[:n, :n]
    return CurvatureReport(
        R=R,
        ric=float(np.trace(R)),
        route=CurvatureRoute.COORDINATE_FORMULA,
        symmetry_defect=float(np.max(np.abs(R - R.T))),
    )


# frame lemmas


def gauge_uniqueness_drift(
    H: ChartHamiltonian,
    state: CotangentState,
    T: float = 1.0,
    seed: int = 0,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
) -> float:
    """
    Largest change of O_rel(t) = E(t)^+ E~(t) between the triangular frame
    and a frame built from a randomly rotated vertical basis.
    """
    n = H.n
    rng = np.random.default_rng(seed)
    Q0 = ortho_group.rvs(n, random_state=rng) if n > 1 else np.eye(1)
    skew = rng.normal(size=(n, n))
    skew = skew - skew.T

    def gauge(t: float) -> Tuple[np.ndarray, np.ndarray]:
        Q = expm(t * skew) @ Q0
        return Q, skew @ Q

    trajectory = variational_flow(H, state, T, steps_per_unit)
    reference = canonical_frame(H, trajectory)
    rotated = canonical_frame(H, trajectory, gauge)
    relative = [
        np.linalg.lstsq(reference.e[k], rotated.e[k], rcond=None)[0]
        for k in range(len(trajectory.times))
    ]
    return max(float(np.max(np.abs(O_rel - relative[0]))) for O_rel in relative)


def time_shift_defect(
    H: ChartHamiltonian,
    state: CotangentState,
    t: float,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
) -> float:
    """
    Compare R at alpha(t) read from a frame started at alpha with R from a
    frame started at alpha(t), both in the triangular vertical gauge.
    """
    shift = int(round(t * steps_per_unit))
    bundle, center = frame_around(H, state, MARGIN_STEPS, shift + MARGIN_STEPS, steps_per_unit)
    index = bundle.trajectory.index_of(bundle.times[center] + shift / steps_per_unit)
    R_shifted = to_vertical_gauge(bundle, index, _extract_curvature(bundle, index)[0])
    fresh = curvature_report(H, bundle.trajectory.state(index), steps_per_unit=steps_per_unit)
    return float(np.max(np.abs(R_shifted - fresh.R)))


@dataclass(frozen=True)
class ScalingCheck:
    lhs: float
    rhs: float
    defect: float
    relative_defect: float
    scale: float


def fconv_scaling_check(
    base: ChartHamiltonian,
    profile: object,
    state: CotangentState,
    N: Optional[float] = None,
    weight: Optional[WeightField] = None,
) -> ScalingCheck:
    """
    Compare Ric of the deformation h(F*) with c^2 Ric of the Finsler base,
    c = h'(F*)/F*; with N given the weighted curvatures are compared.
    """
    profile = parse_profile(profile)
    deformed = deform(base, profile)
    dual_norm = np.sqrt(2.0 * base.value(state.x, state.alpha))
    if dual_norm == 0:
        raise CurvatureError("scaling check needs alpha off the zero section")
    (t,) = profile.free_symbols
    slope = float(profile.diff(t).subs(t, dual_norm))
    scale = slope / dual_norm

    if N is None and weight is None:
        lhs = ricci(deformed, state)
        rhs = scale**2 * ricci(base, state)
    else:
        weight = weight or WeightField.lebesgue(base.n)
        N = np.inf if N is None else N
        lhs = weighted_ricci(deformed, weight, state, N)
        rhs = scale**2 * weighted_ricci(base, weight, state, N)
    defect = abs(lhs - rhs)
    return ScalingCheck(lhs, rhs, defect, defect / max(abs(rhs), 1e-12), scale)
