"""Hamiltonian flow, its linearization, and the exponential map of scale c."""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import root_scalar

from .errors import ChartExitError, ConservationError, ScaleError, SymplecticDefectError
from .hamiltonians import ChartHamiltonian, CotangentState, lagrangian, legendre_inverse
from .jets import SampledCurve, curve_derivatives

logger = logging.getLogger(__name__)

DEFAULT_STEPS_PER_UNIT = 1024
MAX_REFINEMENTS = 3
CONSERVATION_TOL = 1e-8
SYMPLECTIC_TOL = 1e-6
MAX_BRACKET_DOUBLINGS = 200


def canonical_symplectic(n: int) -> np.ndarray:
    """Omega_can with omega(v, w) = v^T Omega_can w in (x, alpha) block order."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, -eye], [eye, zero]])


def rk4(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t0: float,
    dt: float,
    steps: int,
    guard: Optional[Callable[[float, np.ndarray], None]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Classical fourth-order Runge-Kutta on a fixed grid; returns (times, states)."""
    ys = np.empty((steps + 1,) + np.shape(y0))
    ys[0] = y0
    y = np.asarray(y0, dtype=float)
    for k in range(steps):
        t = t0 + k * dt
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ys[k + 1] = y
        if guard is not None:
            guard(t + dt, y)
    times = t0 + dt * np.arange(steps + 1)
    return times, ys


@dataclass(frozen=True)
class FlowTrajectory:
    """Samples of Phi_t on a uniform grid, optionally with dPhi_t."""

    times: np.ndarray
    z: np.ndarray
    H0: float
    jacobians: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.z.shape[1] // 2

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def x(self) -> np.ndarray:
        return self.z[:, : self.n]

    @property
    def alpha(self) -> np.ndarray:
        return self.z[:, self.n :]

    @cached_property
    def states(self) -> List[CotangentState]:
        return [CotangentState.from_z(z) for z in self.z]

    def state(self, index: int) -> CotangentState:
        return CotangentState.from_z(self.z[index])

    @property
    def final(self) -> CotangentState:
        return self.state(-1)

    def index_of(self, t: float) -> int:
        return SampledCurve(self.times, self.z).index_of(t)

    def energy_drift(self, H: ChartHamiltonian) -> float:
        return max(abs(H.value_z(z) - self.H0) for z in self.z)

    def symplectic_defect(self) -> float:
        """max_k |J^T Omega J - Omega|; 0 when no jacobians are stored."""
        if self.jacobians is None:
            return 0.0
        omega = canonical_symplectic(self.n)
        return max(float(np.max(np.abs(J.T @ omega @ J - omega))) for J in self.jacobians)


def _steps_for(T: float, steps_per_unit: int) -> int:
    return max(1, int(math.ceil(abs(T) * steps_per_unit - 1e-9)))


def _chart_guard(H: ChartHamiltonian, n: int) -> Callable[[float, np.ndarray], None]:
    def guard(t: float, y: np.ndarray) -> None:
        x = y[:n]
        if not np.all(np.isfinite(y[: 2 * n])) or not H.chart.contains(x):
            raise ChartExitError(f"flow left chart domain at t={t:.6g} (x={x})", exit_time=t)

    return guard


def _integrate(
    H: ChartHamiltonian,
    state0: CotangentState,
    T: float,
    steps_per_unit: int,
    steps: Optional[int],
    with_jacobians: bool,
    conserve_tol: Optional[float],
) -> FlowTrajectory:
    n = H.n
    H0 = H.value_z(state0.z)
    if conserve_tol is None:
        conserve_tol = CONSERVATION_TOL * (1.0 + abs(H0)) * max(abs(T), 1.0)

    def rhs_state(t: float, y: np.ndarray) -> np.ndarray:
        return H.vector_field(y)

    def rhs_variational(t: float, y: np.ndarray) -> np.ndarray:
        z = y[: 2 * n]
        J = y[2 * n :].reshape(2 * n, 2 * n)
        dJ = H.vector_field_jacobian(z) @ J
        return np.concatenate([H.vector_field(z), dJ.ravel()])

    if with_jacobians:
        rhs = rhs_variational
        y0 = np.concatenate([state0.z, np.eye(2 * n).ravel()])
    else:
        rhs = rhs_state
        y0 = state0.z

    count = steps if steps is not None else _steps_for(T, steps_per_unit)
    guard = _chart_guard(H, n)
    for refinement in range(MAX_REFINEMENTS + 1):
        dt = T / count
        times, ys = rk4(rhs, y0, 0.0, dt, count, guard=guard)
        z = ys[:, : 2 * n]
        jacobians = ys[:, 2 * n :].reshape(-1, 2 * n, 2 * n) if with_jacobians else None
        trajectory = FlowTrajectory(times, z, H0, jacobians)
        drift = trajectory.energy_drift(H)
        if drift <= conserve_tol:
            return trajectory
        logger.debug(
            f"energy drift {drift:.3e} above {conserve_tol:.3e} with {count} steps, doubling"
        )
        count *= 2

    raise ConservationError(
        f"energy drift {drift:.3e} of {H.name} exceeds {conserve_tol:.3e} after "
        f"{MAX_REFINEMENTS} step doublings"
    )


def hamiltonian_flow(
    H: ChartHamiltonian,
    state0: CotangentState,
    T: float,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
    steps: Optional[int] = None,
    conserve_tol: Optional[float] = None,
) -> FlowTrajectory:
    """
    Integrate x' = H_alpha, alpha' = -H_x from state0 over [0, T] (T may be negative).

    Raises:
        ChartExitError: If x leaves the chart
        ConservationError: If H drifts beyond tolerance after refinement
    """
    return _integrate(H, state0, T, steps_per_unit, steps, False, conserve_tol)


def variational_flow(
    H: ChartHamiltonian,
    state0: CotangentState,
    T: float,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
    steps: Optional[int] = None,
    conserve_tol: Optional[float] = None,
    symplectic_tol: float = SYMPLECTIC_TOL,
) -> FlowTrajectory:
    """
    Integrate the flow together with J' = DX_H J, J(0) = I.

    Raises:
        SymplecticDefectError: If J^T Omega J drifts from Omega beyond tolerance
    """
    trajectory = _integrate(H, state0, T, steps_per_unit, steps, True, conserve_tol)
    defect = trajectory.symplectic_defect()
    if defect > symplectic_tol:
        raise SymplecticDefectError(
            f"linearization inconsistent with flow: symplectic defect {defect:.3e}"
        )
    return trajectory


def flow_map(
    H: ChartHamiltonian,
    state: CotangentState,
    t: float,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
) -> CotangentState:
    """Phi_t(state)."""
    if t == 0:
        return state
    return hamiltonian_flow(H, state, t, steps_per_unit).final


def euler_lagrange_residual(
    H: ChartHamiltonian, trajectory: FlowTrajectory, stride: int = 8, position_step: float = 1e-3
) -> float:
    """
    Largest |L_x(eta, eta') - d/dt L_v(eta, eta')| over interior samples.

    Only the projected curve eta = x(t) is used. eta' is differenced from the
    samples, L_v(eta, eta') = tau(eta') comes from the inverse Legendre
    transform and L_x from central differences of L in the position slot.
    """
    times = trajectory.times
    dt = abs(trajectory.dt)
    positions = SampledCurve(times, trajectory.x)
    momenta = np.full(trajectory.x.shape, np.nan)
    velocities = np.full(trajectory.x.shape, np.nan)
    for k in range(4, len(times) - 4):
        velocities[k] = curve_derivatives(positions, times[k], order=1, h0=dt).first
        momenta[k] = legendre_inverse(H, trajectory.x[k], velocities[k]).alpha

    curve = SampledCurve(times, momenta)
    h0 = stride * dt
    margin = 4 + 4 * stride
    worst = 0.0
    for k in range(margin, len(times) - margin, stride):
        x, v = trajectory.x[k], velocities[k]
        lagrangian_x = np.array(
            [
                curve_derivatives(
                    lambda s, i=i: lagrangian(H, x + s * np.eye(H.n)[i], v), 0.0, order=1, h0=position_step
                ).first
                for i in range(H.n)
            ]
        )
        derivative = curve_derivatives(curve, times[k], order=1, h0=h0).first
        worst = max(worst, float(np.max(np.abs(lagrangian_x - derivative))))
    return worst


# exponential map of scale c


def energy_scale(H: ChartHamiltonian, z: np.ndarray, alpha: np.ndarray, c: float) -> float:
    """
    The scale a > 0 with H(z, a alpha) = c.

    Raises:
        ScaleError: If H(z, 0) >= c, no bracket is found or the map is not finite
    """
    z = np.asarray(z, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if c <= 0:
        raise ScaleError(f"scale outside reachable energies: c={c} must be positive")
    if not np.any(alpha):
        raise ScaleError("scale outside reachable energies: alpha must be nonzero")

    def energy(a: float) -> float:
        return H.value(z, a * alpha) - c

    def energy_prime(a: float) -> float:
        return float(alpha @ H.momentum_gradient(z, a * alpha))

    base = energy(0.0)
    if not np.isfinite(base) or base >= 0:
        raise ScaleError(f"scale outside reachable energies: H(z, 0) >= {c}")

    upper = 1.0
    for _ in range(MAX_BRACKET_DOUBLINGS):
        value = energy(upper)
        if not np.isfinite(value):
            raise ScaleError(f"scale outside reachable energies: H not finite at a={upper}")
        if value >= 0:
            break
        upper *= 2.0
    else:
        raise ScaleError(f"scale outside reachable energies: H(a alpha) < {c} for a <= {upper}")

    bracket = root_scalar(energy, bracket=[0.0, upper], method="bisect", xtol=1e-6 * upper)
    polished = root_scalar(energy, x0=bracket.root, fprime=energy_prime, method="newton", xtol=1e-15)
    scale = polished.root if polished.converged and polished.root > 0 else bracket.root
    logger.debug(f"energy scale for c={c}: a={scale}")
    return float(scale)


def radial_curve(
    H: ChartHamiltonian,
    z: np.ndarray,
    alpha: np.ndarray,
    c: float,
    T: float,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
) -> FlowTrajectory:
    """The trajectory t -> Phi_t(a alpha) on [0, T] with H(a alpha) = c."""
    scale = energy_scale(H, z, alpha, c)
    start = CotangentState(z, scale * np.asarray(alpha, dtype=float))
    return hamiltonian_flow(H, start, T, steps_per_unit)


def exp_scale_c(
    H: ChartHamiltonian,
    z: np.ndarray,
    alpha: np.ndarray,
    c: float,
    t: float = 1.0,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
) -> np.ndarray:
    """exp_z^c(t alpha): the projection of Phi_{t/a}(a alpha) with H(z, a alpha) = c."""
    scale = energy_scale(H, z, alpha, c)
    start = CotangentState(z, scale * np.asarray(alpha, dtype=float))
    return flow_map(H, start, t / scale, steps_per_unit).x


def radial_potential(
    H: ChartHamiltonian,
    z: np.ndarray,
    alpha: np.ndarray,
    c: float,
    t_grid: np.ndarray,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
) -> np.ndarray:
    """u_z^c(eta(t)) = c t + int_0^t L(eta'(s)) ds on t_grid (nonnegative, increasing)."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0) or np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be nonnegative and nondecreasing")
    horizon = float(t_grid[-1])
    if horizon == 0:
        return np.zeros_like(t_grid)

    trajectory = radial_curve(H, z, alpha, c, horizon, steps_per_unit)
    integrand = np.empty(len(trajectory.times))
    for k, state in enumerate(trajectory.states):
        velocity = H.momentum_gradient(state.x, state.alpha)
        # Fenchel equality at alpha = tau(eta')
        action = float(state.alpha @ velocity) - H.value(state.x, state.alpha)
        integrand[k] = c + action
    potential = cumulative_trapezoid(integrand, trajectory.times, initial=0.0)
    return np.interp(t_grid, trajectory.times, potential)
