"""Riccati and Bochner identities along characteristics, and the comparison checks."""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .errors import (
    ComparisonHypothesisError,
    CriticalPointError,
    FocalTimeError,
    RiccatiBlowUpError,
)
from .flow import DEFAULT_STEPS_PER_UNIT
from .frames import (
    FD_STRIDE,
    MARGIN_STEPS,
    FrameBundle,
    curvature_along,
    curvature_report,
    frame_around,
    psi_along,
    weighted_ricci_value,
)
from .hamiltonians import ChartHamiltonian, CotangentState, WeightField
from .jets import SampledCurve, ScalarField, curve_derivatives
from .laplacian import hessian_from_data, hessian_H, laplacian_from_data, laplacian_Hm

logger = logging.getLogger(__name__)

RICCATI_CONDITION_LIMIT = 1e12
HYPOTHESIS_TOL = 1e-6
BLOWUP_LEVEL = 1e8
CONE_SAMPLES = 400
DEFAULT_N_VALUES = ("n", "n+1", "2n", 1e6)

Curve = Callable[[float], float]


# model functions


def model_focal_time(K: float, N: float) -> float:
    """pi sqrt(N/K) for K > 0, infinite otherwise."""
    return math.pi * math.sqrt(N / K) if K > 0 else math.inf


def s_KN(K: float, N: float, t: float) -> float:
    """
    The model function: sqrt(N/K) sin(sqrt(K/N) t), t, or sqrt(-N/K) sinh(sqrt(-K/N) t).

    Raises:
        FocalTimeError: If K > 0 and t reaches pi sqrt(N/K)
    """
    if t < 0:
        raise ValueError(f"s_KN needs t >= 0, got {t}")
    if K > 0:
        if t >= model_focal_time(K, N):
            raise FocalTimeError(f"past model focal time: t={t} >= {model_focal_time(K, N):.6g}")
        return math.sqrt(N / K) * math.sin(math.sqrt(K / N) * t)
    if K == 0:
        return float(t)
    return math.sqrt(-N / K) * math.sinh(math.sqrt(-K / N) * t)


def s_KN_derivative(K: float, N: float, t: float) -> float:
    if K > 0:
        return math.cos(math.sqrt(K / N) * t)
    if K == 0:
        return 1.0
    return math.cosh(math.sqrt(-K / N) * t)


def s_KN_bound(K: float, N: float, t: float) -> float:
    """N s'/s, the comparison bound for the weighted Laplacian."""
    return N * s_KN_derivative(K, N, t) / s_KN(K, N, t)


@dataclass(frozen=True)
class ModelComparison:
    K: float
    N: float

    @property
    def focal_time(self) -> float:
        return model_focal_time(self.K, self.N)

    def s(self, t: float) -> float:
        return s_KN(self.K, self.N, t)

    def bound(self, t: float) -> float:
        return s_KN_bound(self.K, self.N, t)


# Hamilton-Jacobi transport


@dataclass(frozen=True)
class RiccatiState:
    t: float
    A: np.ndarray
    B: np.ndarray
    hess: np.ndarray
    trace_lap: float


@dataclass(frozen=True)
class HJTransport:
    """
    Hessian data along the characteristic through du_{x0}.

    ``states`` come from the (A, B) Riccati pair; the ``characteristic_*``
    arrays come from the linearized flow acting on the graph of d(du), on
    every sample of the bundle's trajectory.
    """

    bundle: FrameBundle
    start_index: int
    end_index: int
    states: List[RiccatiState]
    curvature: np.ndarray
    characteristic_hess: np.ndarray
    characteristic_lap: np.ndarray
    psi: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.bundle.times - self.bundle.times[self.start_index]


def _characteristic(
    H: ChartHamiltonian,
    weight: Optional[WeightField],
    bundle: FrameBundle,
    start: int,
    U0: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    n = H.n
    trajectory = bundle.trajectory
    J0_inv = np.linalg.inv(trajectory.jacobians[start])
    hess = np.full((len(trajectory.times), n, n), np.nan)
    lap = np.full(len(trajectory.times), np.nan)
    for k, z in enumerate(trajectory.z):
        J = trajectory.jacobians[k] @ J0_inv
        X = J[:n, :n] + J[:n, n:] @ U0
        Y = J[n:, :n] + J[n:, n:] @ U0
        if np.linalg.cond(X) > RICCATI_CONDITION_LIMIT:
            continue
        U = Y @ np.linalg.inv(X)
        U = 0.5 * (U + U.T)
        x, alpha = z[:n], z[n:]
        O = bundle.O[k]
        hess[k] = O @ hessian_from_data(H, x, alpha, U) @ O.T
        lap[k] = laplacian_from_data(H, weight, x, alpha, U)
    return hess, lap


def hj_transport(
    H: ChartHamiltonian,
    u: ScalarField,
    x0: Sequence[float],
    T: float,
    weight: Optional[WeightField] = None,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
) -> HJTransport:
    """
    Evolve Hess u_t along eta(t) = pi(Phi_t(du_{x0})) through B' = -A, A' = B R(t).

    A(0) = -Hess u(x0) and B(0) = I in the canonical frame; the Riccati pair
    is stepped with RK4 over pairs of trajectory samples.

    Raises:
        CriticalPointError: If du_{x0} = 0
        RiccatiBlowUpError: If B becomes singular
    """
    x0 = np.asarray(x0, dtype=float)
    p0 = u.gradient(x0)
    if not np.any(p0):
        raise CriticalPointError(f"Hessian requires noncritical point, du = 0 at x={list(x0)}")
    U0 = u.hessian(x0)
    span = int(round(T * steps_per_unit))
    span += span % 2
    bundle, start = frame_around(
        H, CotangentState(x0, p0), MARGIN_STEPS, span + MARGIN_STEPS, steps_per_unit
    )
    trajectory = bundle.trajectory
    end = trajectory.index_of(trajectory.times[start] + span / steps_per_unit)
    indices = list(range(start, end + 1))
    curvature = curvature_along(bundle, indices)
    psi = psi_along(H, weight, trajectory)
    psi_curve = SampledCurve(trajectory.times, psi)
    h0 = FD_STRIDE * abs(trajectory.dt)

    characteristic_hess, characteristic_lap = _characteristic(H, weight, bundle, start, U0)

    n = H.n
    O = bundle.O[start]
    A = -(O @ hessian_from_data(H, x0, p0, U0) @ O.T)
    B = np.eye(n)
    step = 2.0 * trajectory.dt
    states = []
    for j in range(0, len(indices), 2):
        t = j * trajectory.dt
        if np.linalg.cond(B) > RICCATI_CONDITION_LIMIT:
            raise RiccatiBlowUpError(f"Riccati blow-up at t={t:.6g}", time=t)
        hess = -np.linalg.solve(B, A)
        hess = 0.5 * (hess + hess.T)
        psi_first = curve_derivatives(psi_curve, trajectory.times[indices[j]], order=1, h0=h0).first
        states.append(RiccatiState(t, A.copy(), B.copy(), hess, float(np.trace(hess)) - psi_first))
        if j + 2 >= len(indices):
            break

        def rates(R: np.ndarray, A_: np.ndarray, B_: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            return B_ @ R, -A_

        R0, R1, R2 = curvature[j], curvature[j + 1], curvature[j + 2]
        kA1, kB1 = rates(R0, A, B)
        kA2, kB2 = rates(R1, A + 0.5 * step * kA1, B + 0.5 * step * kB1)
        kA3, kB3 = rates(R1, A + 0.5 * step * kA2, B + 0.5 * step * kB2)
        kA4, kB4 = rates(R2, A + step * kA3, B + step * kB3)
        A = A + (step / 6.0) * (kA1 + 2 * kA2 + 2 * kA3 + kA4)
        B = B + (step / 6.0) * (kB1 + 2 * kB2 + 2 * kB3 + kB4)

    return HJTransport(
        bundle=bundle,
        start_index=start,
        end_index=end,
        states=states,
        curvature=curvature,
        characteristic_hess=characteristic_hess,
        characteristic_lap=characteristic_lap,
        psi=psi,
    )


@dataclass(frozen=True)
class RiccatiResidual:
    matrix: float
    trace: float
    riccati_gap: float


def riccati_residual(
    H: ChartHamiltonian,
    weight: Optional[WeightField],
    u: ScalarField,
    x0: Sequence[float],
    T: float,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
    transport: Optional[HJTransport] = None,
) -> RiccatiResidual:
    """
    Residuals of d/dt Hess + Hess^2 + R = 0 and of the weighted trace identity
    d/dt Delta_m + tr Hess^2 + Ric + psi'' = 0 on the characteristic Hessian,
    plus the gap between the Riccati-pair Hessian and the characteristic one.
    An already computed ``transport`` for the same data can be passed in.
    """
    if transport is None:
        transport = hj_transport(H, u, x0, T, weight, steps_per_unit)
    trajectory = transport.bundle.trajectory
    h0 = FD_STRIDE * abs(trajectory.dt)
    hess_curve = SampledCurve(trajectory.times, transport.characteristic_hess)
    lap_curve = SampledCurve(trajectory.times, transport.characteristic_lap)
    psi_curve = SampledCurve(trajectory.times, transport.psi)

    matrix_residual = 0.0
    trace_residual = 0.0
    for offset in range(0, transport.end_index - transport.start_index + 1, FD_STRIDE):
        k = transport.start_index + offset
        t = trajectory.times[k]
        R = transport.curvature[offset]
        hess = transport.characteristic_hess[k]
        hess_dot = curve_derivatives(hess_curve, t, order=1, h0=h0).first
        lap_dot = curve_derivatives(lap_curve, t, order=1, h0=h0).first
        psi_second = curve_derivatives(psi_curve, t, order=2, h0=h0).second
        matrix_residual = max(matrix_residual, float(np.linalg.norm(hess_dot + hess @ hess + R)))
        scalar = lap_dot + float(np.trace(hess @ hess)) + float(np.trace(R)) + psi_second
        trace_residual = max(trace_residual, abs(scalar))

    gap = 0.0
    for state in transport.states:
        k = transport.start_index + int(round(state.t / trajectory.dt))
        gap = max(gap, float(np.max(np.abs(state.hess - transport.characteristic_hess[k]))))
    logger.debug(f"Riccati residuals: matrix {matrix_residual:.3e}, trace {trace_residual:.3e}, gap {gap:.3e}")
    return RiccatiResidual(matrix_residual, trace_residual, gap)


# Bochner-Weitzenbock


@dataclass(frozen=True)
class BochnerReport:
    lhs: float
    rhs: float
    defect: float
    laplacian: float
    nbw_slack: Dict[float, float] = field(default_factory=dict)


def _bochner_lhs(H: ChartHamiltonian, weight: WeightField, u: ScalarField) -> sp.Expr:
    """Delta^{du}_m H(du) - d(Delta_m u)(grad u) as a symbolic expression in x."""
    xs = H.x_symbols
    alphas = H.alpha_symbols
    du = [sp.diff(u.expr, xi) for xi in xs]
    on_graph = dict(zip(alphas, du))
    f = H.expr.subs(on_graph)
    momentum = [sp.diff(H.expr, a).subs(on_graph) for a in alphas]
    fiber = [[sp.diff(H.expr, a, b).subs(on_graph) for b in alphas] for a in alphas]
    grad_f = [sp.diff(f, xi) for xi in xs]
    flux = [sum(fiber[i][j] * grad_f[j] for j in range(H.n)) for i in range(H.n)]
    varsigma = weight.expr

    def div_m(components: List[sp.Expr]) -> sp.Expr:
        return sum(sp.diff(c, xi) - c * sp.diff(varsigma, xi) for c, xi in zip(components, xs))

    lap_u = div_m(momentum)
    return div_m(flux) - sum(sp.diff(lap_u, xi) * m for xi, m in zip(xs, momentum))


def _resolve_dimension(value: object, n: int) -> float:
    if value == "n":
        return float(n)
    if value == "2n":
        return float(2 * n)
    if value == "n+1":
        return float(n + 1)
    return float(value)


def bochner_residual(
    H: ChartHamiltonian,
    weight: Optional[WeightField],
    u: ScalarField,
    x: Sequence[float],
    N_values: Sequence[object] = DEFAULT_N_VALUES,
) -> BochnerReport:
    """
    Both sides of the Bochner-Weitzenbock identity at x and the slack of its
    dimensional form lhs - Ric_N - (Delta_m u)^2 / N.
    """
    x = np.asarray(x, dtype=float)
    weight = weight if weight is not None else WeightField.lebesgue(H.n)
    p = u.gradient(x)
    if not np.any(p):
        raise CriticalPointError(f"Hessian requires noncritical point, du = 0 at x={list(x)}")

    lhs_expr = _bochner_lhs(H, weight, u)
    lhs = float(sp.lambdify(H.x_symbols, lhs_expr, modules="numpy")(*x))

    report = curvature_report(H, CotangentState(x, p), weight=weight, N=np.inf)
    hess = hessian_H(H, u, x)
    rhs = float(report.ric_N) + float(np.sum(hess * hess))
    lap = laplacian_Hm(H, weight, u, x)

    slack = {}
    for value in N_values:
        N = _resolve_dimension(value, H.n)
        ric_N = weighted_ricci_value(report.ric, *report.psi_derivs, H.n, N)
        slack[N] = math.inf if ric_N == -math.inf else lhs - ric_N - lap**2 / N
    return BochnerReport(lhs, rhs, abs(lhs - rhs), lap, slack)


# Laplacian comparison


@dataclass(frozen=True)
class ComparisonReport:
    times: np.ndarray
    delta: np.ndarray
    bound: np.ndarray
    worst_violation: float
    focal_time: Optional[float]
    min_ric_N: float
    refinement_gap: float
    sharper_candidate_gap: Optional[float]
    log_density: Callable[[float], float]
    log_density_derivative: Callable[[float], float]


def _zero(t: float) -> float:
    return 0.0


def _solve_cone(
    R_oracle: Callable[[float], np.ndarray],
    psi_first: Curve,
    n: int,
    t0: float,
    t_end: float,
    projector: np.ndarray,
):
    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        hess = y[:-1].reshape(n, n)
        hess_dot = -hess @ hess - R_oracle(t)
        return np.concatenate([hess_dot.ravel(), [np.trace(hess) - psi_first(t)]])

    def blowup(t: float, y: np.ndarray) -> float:
        return np.trace(y[:-1].reshape(n, n)) + BLOWUP_LEVEL

    blowup.terminal = True
    blowup.direction = -1

    seed = projector / t0 - projector @ R_oracle(t0) @ projector * (t0 / 3.0)
    y0 = np.concatenate([seed.ravel(), [0.0]])
    return solve_ivp(
        rhs,
        (t0, t_end),
        y0,
        method="DOP853",
        rtol=1e-11,
        atol=1e-12,
        dense_output=True,
        events=blowup,
    )


def laplacian_comparison_check(
    R_oracle: Callable[[float], np.ndarray],
    K: float,
    N: float,
    T: float,
    n: int,
    weight_derivs: Optional[Tuple[Curve, Curve]] = None,
    t0: float = 1e-3,
    seed_projector: Optional[np.ndarray] = None,
    samples: int = CONE_SAMPLES,
) -> ComparisonReport:
    """
    Integrate H' = -H^2 - R(t) from the cone seed at t0 and compare
    Delta(t) = tr H - psi'(t) with N s'/s for the model (K, N).

    ``weight_derivs`` supplies psi' and psi'' along the curve. The log-density
    l(t) with l' = Delta, l(t0) = 0, is integrated alongside.

    Raises:
        ComparisonHypothesisError: If Ric_N >= K fails along the curve
    """
    psi_first, psi_second = weight_derivs or (_zero, _zero)
    projector = np.eye(n) if seed_projector is None else np.asarray(seed_projector, dtype=float)
    model = ModelComparison(K, N)
    t_end = min(T, model.focal_time * (1.0 - 1e-9))

    solution = _solve_cone(R_oracle, psi_first, n, t0, t_end, projector)
    focal = float(solution.t_events[0][0]) if len(solution.t_events[0]) else None
    t_stop = float(solution.t[-1])
    times = np.geomspace(t0, t_stop * (1.0 - 1e-9), samples)

    def trace_at(sol, t: float) -> float:
        return float(np.trace(sol.sol(t)[:-1].reshape(n, n)))

    delta = np.array([trace_at(solution, t) - psi_first(t) for t in times])
    bound = np.array([model.bound(t) for t in times])
    worst = float(np.max(delta - bound))

    ric_N = []
    for t in times:
        ric = float(np.trace(R_oracle(t)))
        ric_N.append(weighted_ricci_value(ric, psi_first(t), psi_second(t), n, N))
    min_ric_N = float(np.min(ric_N))
    if min_ric_N < K - HYPOTHESIS_TOL:
        raise ComparisonHypothesisError(
            f"Ric_N >= K fails along the curve: min Ric_N = {min_ric_N:.6g} < K = {K}"
        )

    refined = _solve_cone(R_oracle, psi_first, n, 0.5 * t0, t_stop, projector)
    late = times[times >= 10.0 * t0]
    refinement_gap = 0.0
    if len(late) and refined.t[-1] >= late[-1]:
        refinement_gap = max(abs(trace_at(refined, t) - trace_at(solution, t)) for t in late)

    sharper = None
    if N - 1 >= 1:
        candidate = ModelComparison(K, N - 1)
        usable = times[times < candidate.focal_time]
        if len(usable):
            sharper = max(
                trace_at(solution, t) - psi_first(t) - candidate.bound(t) for t in usable
            )

    def log_density(t: float) -> float:
        return float(solution.sol(t)[-1])

    def log_density_derivative(t: float) -> float:
        return trace_at(solution, t) - psi_first(t)

    logger.info(
        f"comparison (K={K}, N={N}): worst violation {worst:.3e}, focal time {focal}, "
        f"refinement gap {refinement_gap:.3e}"
    )
    return ComparisonReport(
        times=times,
        delta=delta,
        bound=bound,
        worst_violation=worst,
        focal_time=focal,
        min_ric_N=min_ric_N,
        refinement_gap=refinement_gap,
        sharper_candidate_gap=sharper,
        log_density=log_density,
        log_density_derivative=log_density_derivative,
    )


def curvature_oracle(
    H: ChartHamiltonian,
    state: CotangentState,
    T: float,
    weight: Optional[WeightField] = None,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
) -> Tuple[Callable[[float], np.ndarray], Curve, Curve]:
    """Spline interpolants of R(t), psi'(t) and psi''(t) along the trajectory of ``state`` on [0, T]."""
    span = int(round(T * steps_per_unit))
    bundle, start = frame_around(H, state, MARGIN_STEPS, span + MARGIN_STEPS, steps_per_unit)
    trajectory = bundle.trajectory
    end = trajectory.index_of(trajectory.times[start] + span / steps_per_unit)
    indices = list(range(start, end + 1, FD_STRIDE))
    if indices[-1] != end:
        indices.append(end)
    times = trajectory.times[indices] - trajectory.times[start]
    R = curvature_along(bundle, indices)
    R = 0.5 * (R + np.transpose(R, (0, 2, 1)))
    R_spline = CubicSpline(times, R, axis=0)

    psi = psi_along(H, weight, trajectory)
    psi_curve = SampledCurve(trajectory.times, psi)
    h0 = FD_STRIDE * abs(trajectory.dt)
    derivs = [curve_derivatives(psi_curve, trajectory.times[k], order=2, h0=h0) for k in indices]
    first = CubicSpline(times, [d.first for d in derivs])
    second = CubicSpline(times, [d.second for d in derivs])

    return (lambda t: R_spline(t)), (lambda t: float(first(t))), (lambda t: float(second(t)))


# measure contraction


@dataclass(frozen=True)
class MCPVerdict:
    non_increasing: bool
    worst_increase: float
    trace_bound_holds: bool
    worst_trace_excess: float

    @property
    def equivalent(self) -> bool:
        return self.non_increasing == self.trace_bound_holds


def mcp_ratio_check(
    varsigma_along_eta: Curve,
    K: float,
    N: float,
    t_grid: Sequence[float],
    derivative: Optional[Curve] = None,
    slack: float = 1e-8,
    derivative_tol: float = 1e-6,
) -> MCPVerdict:
    """
    Check that exp(varsigma(eta(t))) / s_KN(t)^N is non-increasing on a positive grid,
    and independently that (varsigma o eta)' <= N s'/s on the same grid.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0):
        raise ValueError("measure contraction grid must be positive")
    log_ratio = np.array([varsigma_along_eta(t) - N * math.log(s_KN(K, N, t)) for t in t_grid])
    increments = np.diff(log_ratio)
    worst_increase = float(np.max(increments)) if len(increments) else 0.0

    excess = []
    for t in t_grid:
        if derivative is not None:
            slope = derivative(t)
        else:
            slope = curve_derivatives(varsigma_along_eta, t, order=1).first
        bound = s_KN_bound(K, N, t)
        excess.append((slope - bound) / (1.0 + abs(bound)))
    worst_excess = float(np.max(excess))
    return MCPVerdict(
        non_increasing=worst_increase <= math.log1p(slack),
        worst_increase=worst_increase,
        trace_bound_holds=worst_excess <= derivative_tol,
        worst_trace_excess=worst_excess,
    )
