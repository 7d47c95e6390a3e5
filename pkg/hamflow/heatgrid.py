"""
Periodic and box grids for the heat flow, its minimizing-movement scheme,
the entropy gradient flow and Dirichlet energy minimization.

The discrete energy lives on cell faces. A face covector has the one-sided
difference across the face as its normal component and the average of the
two cells' centered differences as its tangential components. The discrete
Laplacian is minus the energy gradient divided by the cell masses, so mass
conservation and the variational structure hold exactly.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache, reduce
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sparse
from scipy.optimize import minimize
from scipy.sparse.linalg import spsolve

from .errors import InnerSolveError, PositivityError, StabilityError
from .hamiltonians import ChartHamiltonian, WeightField

logger = logging.getLogger(__name__)

MIN_CELLS = 8
STABILITY_SAFETY = 0.5
ENERGY_ROUNDOFF = 1e-12
INNER_TOL = 1e-10
NEWTON_MAX_ITER = 30
LBFGS_MAX_ITER = 20000
POSITIVITY_FLOOR = 1e-12
LOGMEAN_CUTOFF = 1e-12
MMS_STEPS = (16, 32, 64)
MMS_REFERENCE_REFINEMENT = 256
SLOPE_DELTAS = (4e-3, 2e-3, 1e-3)

Initial = Union[np.ndarray, Callable[..., np.ndarray], float]


@dataclass(frozen=True)
class GridField:
    """Cell values on a uniform grid with reference measure m_c = exp(-varsigma_c) h^d."""

    values: np.ndarray
    spacing: float
    weight: np.ndarray
    origin: Tuple[float, ...]
    periodic: bool = True

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weight", np.broadcast_to(np.asarray(self.weight, dtype=float), values.shape).copy())
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if values.ndim not in (1, 2):
            raise ValueError(f"Grid dimension must be 1 or 2, got {values.ndim}")
        if min(values.shape) < MIN_CELLS:
            raise ValueError(f"Grid needs at least {MIN_CELLS} cells per axis, got shape {values.shape}")
        if len(self.origin) != values.ndim:
            raise ValueError(f"Origin {self.origin} does not match grid dimension {values.ndim}")
        if not self.total_mass > 0:
            raise ValueError("Reference measure has no mass on the grid")

    @classmethod
    def on_torus(
        cls,
        shape: Sequence[int],
        length: float = 1.0,
        initial: Initial = 0.0,
        weight: Optional[WeightField] = None,
    ) -> "GridField":
        """Grid on [0, length)^d with cell centers at i h."""
        shape = tuple(int(s) for s in shape)
        spacing = length / shape[0]
        if any(abs(length / s - spacing) > 1e-15 for s in shape):
            raise ValueError(f"Torus grid must be square, got shape {shape}")
        return cls._build(shape, spacing, (0.0,) * len(shape), initial, weight, periodic=True)

    @classmethod
    def on_box(
        cls,
        shape: Sequence[int],
        lower: Sequence[float],
        spacing: float,
        initial: Initial = 0.0,
        weight: Optional[WeightField] = None,
    ) -> "GridField":
        """Non-periodic grid with cell centers lower + i h."""
        shape = tuple(int(s) for s in shape)
        return cls._build(shape, spacing, tuple(lower), initial, weight, periodic=False)

    @classmethod
    def _build(cls, shape, spacing, origin, initial, weight, periodic) -> "GridField":
        axes = [origin[a] + spacing * np.arange(shape[a]) for a in range(len(shape))]
        coords = np.meshgrid(*axes, indexing="ij")
        if callable(initial):
            values = np.asarray(initial(*coords), dtype=float) * np.ones(shape)
        else:
            values = np.asarray(initial, dtype=float) * np.ones(shape)
        varsigma = np.zeros(shape) if weight is None else weight.value_on(*coords) * np.ones(shape)
        return cls(values, spacing, varsigma, origin, periodic)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def cell_mass(self) -> np.ndarray:
        return np.exp(-self.weight) * self.cell_volume

    @property
    def total_mass(self) -> float:
        return float(np.sum(np.exp(-np.asarray(self.weight))) * self.spacing ** np.ndim(self.values))

    def coords(self) -> List[np.ndarray]:
        axes = [self.origin[a] + self.spacing * np.arange(self.shape[a]) for a in range(self.dim)]
        return np.meshgrid(*axes, indexing="ij")

    def with_values(self, values: np.ndarray) -> "GridField":
        return replace(self, values=np.asarray(values, dtype=float).reshape(self.shape))

    def mass(self) -> float:
        """Integral of u against m."""
        return float(np.sum(self.values * self.cell_mass))


# face operators


@dataclass(frozen=True)
class _FaceFamily:
    components: Tuple[sparse.csr_matrix, ...]
    average: sparse.csr_matrix
    coords: Tuple[np.ndarray, ...]


def _forward(count: int, spacing: float, periodic: bool) -> sparse.csr_matrix:
    faces = count if periodic else count - 1
    rows = np.repeat(np.arange(faces), 2)
    cols = np.stack([np.arange(faces), (np.arange(faces) + 1) % count], axis=1).ravel()
    data = np.tile([-1.0, 1.0], faces) / spacing
    return sparse.csr_matrix((data, (rows, cols)), shape=(faces, count))


def _average(count: int, periodic: bool) -> sparse.csr_matrix:
    faces = count if periodic else count - 1
    rows = np.repeat(np.arange(faces), 2)
    cols = np.stack([np.arange(faces), (np.arange(faces) + 1) % count], axis=1).ravel()
    return sparse.csr_matrix((np.full(2 * faces, 0.5), (rows, cols)), shape=(faces, count))


def _centered(count: int, spacing: float, periodic: bool) -> sparse.csr_matrix:
    matrix = sparse.lil_matrix((count, count))
    for i in range(count):
        if periodic:
            matrix[i, (i + 1) % count] += 0.5 / spacing
            matrix[i, (i - 1) % count] -= 0.5 / spacing
        elif i == 0:
            matrix[i, 1], matrix[i, 0] = 1.0 / spacing, -1.0 / spacing
        elif i == count - 1:
            matrix[i, i], matrix[i, i - 1] = 1.0 / spacing, -1.0 / spacing
        else:
            matrix[i, i + 1], matrix[i, i - 1] = 0.5 / spacing, -0.5 / spacing
    return matrix.tocsr()


def _embed(shape: Tuple[int, ...], axis: int, matrix: sparse.spmatrix) -> sparse.csr_matrix:
    factors = [matrix if a == axis else sparse.identity(shape[a], format="csr") for a in range(len(shape))]
    return reduce(lambda left, right: sparse.kron(left, right, format="csr"), factors)


@lru_cache(maxsize=32)
def _face_families(
    shape: Tuple[int, ...], spacing: float, origin: Tuple[float, ...], periodic: bool
) -> Tuple[_FaceFamily, ...]:
    d = len(shape)
    families = []
    for a in range(d):
        face_shape = list(shape)
        face_shape[a] = shape[a] if periodic else shape[a] - 1
        average = _embed(shape, a, _average(shape[a], periodic))
        components = []
        for k in range(d):
            if k == a:
                components.append(_embed(shape, a, _forward(shape[a], spacing, periodic)))
            else:
                components.append(average @ _embed(shape, k, _centered(shape[k], spacing, periodic)))
        axes = [
            origin[b] + spacing * (np.arange(face_shape[b]) + (0.5 if b == a else 0.0)) for b in range(d)
        ]
        coords = tuple(c.ravel() for c in np.meshgrid(*axes, indexing="ij"))
        families.append(_FaceFamily(tuple(c.tocsr() for c in components), average.tocsr(), coords))
    logger.debug(f"built face operators for shape {shape}, periodic={periodic}")
    return tuple(families)


def _families(grid: GridField) -> Tuple[_FaceFamily, ...]:
    return _face_families(grid.shape, grid.spacing, grid.origin, grid.periodic)


def _check_dimension(H: ChartHamiltonian, grid: GridField) -> None:
    if H.n != grid.dim:
        raise ValueError(f"Hamiltonian dimension {H.n} does not match grid dimension {grid.dim}")


def _energy(H: ChartHamiltonian, grid: GridField, u: np.ndarray) -> float:
    density = np.exp(-grid.weight.ravel())
    total = 0.0
    for family in _families(grid):
        alphas = [C @ u for C in family.components]
        w = family.average @ density
        total += float(np.sum(w * H.value_on(family.coords, alphas)))
    return total * grid.cell_volume / grid.dim


def _energy_gradient(H: ChartHamiltonian, grid: GridField, u: np.ndarray) -> np.ndarray:
    density = np.exp(-grid.weight.ravel())
    gradient = np.zeros(u.size)
    for family in _families(grid):
        alphas = [C @ u for C in family.components]
        w = family.average @ density
        flux = H.momentum_gradient_on(family.coords, alphas)
        for C, component in zip(family.components, flux):
            gradient += C.T @ (w * component)
    return gradient * grid.cell_volume / grid.dim


def _energy_hessian(H: ChartHamiltonian, grid: GridField, u: np.ndarray) -> sparse.csr_matrix:
    density = np.exp(-grid.weight.ravel())
    hessian = sparse.csr_matrix((u.size, u.size))
    for family in _families(grid):
        alphas = [C @ u for C in family.components]
        w = family.average @ density
        with np.errstate(invalid="ignore", divide="ignore"):
            fiber = np.nan_to_num(H.fiber_hessian_on(family.coords, alphas), nan=0.0, posinf=0.0, neginf=0.0)
        for k, Ck in enumerate(family.components):
            for l, Cl in enumerate(family.components):
                hessian = hessian + Ck.T @ sparse.diags(w * fiber[k, l]) @ Cl
    return (hessian * (grid.cell_volume / grid.dim)).tocsr()


def discrete_energy(H: ChartHamiltonian, grid: GridField) -> float:
    """E(u) = sum over faces of H(x_f, Du_f) times the face mass, averaged over face families."""
    _check_dimension(H, grid)
    return _energy(H, grid, grid.values.ravel())


def energy_hessian(H: ChartHamiltonian, grid: GridField) -> sparse.csr_matrix:
    """Sparse second derivative of the discrete energy at the field's values."""
    _check_dimension(H, grid)
    return _energy_hessian(H, grid, grid.values.ravel())


def discrete_laplacian(H: ChartHamiltonian, grid: GridField) -> GridField:
    """Delta^H_m u = -grad E(u) / m_c; sum_c (Delta u)_c m_c vanishes up to roundoff."""
    _check_dimension(H, grid)
    gradient = _energy_gradient(H, grid, grid.values.ravel())
    return grid.with_values(-gradient / grid.cell_mass.ravel())


def l2_distance(a: GridField, b: GridField) -> float:
    """L^2(m) distance between two fields on the same grid."""
    return float(np.sqrt(np.sum((a.values - b.values) ** 2 * a.cell_mass)))


def _l2_norm(grid: GridField, values: np.ndarray) -> float:
    return float(np.sqrt(np.sum(values.reshape(grid.shape) ** 2 * grid.cell_mass)))


def _entropy(grid: GridField, values: np.ndarray) -> float:
    if np.any(values <= 0):
        return math.nan
    return float(np.sum(values * np.log(values) * grid.cell_mass.ravel()))


def stability_bound(H: ChartHamiltonian, grid: GridField, coefficient: float = 1.0) -> float:
    """
    Largest stable explicit step estimated from the local Lipschitz constant of H_alpha.

    The operator norm of -grad E / m is bounded by (3 + d) L w_max / (m_min h^2),
    with L the largest fiber Hessian eigenvalue over the data's face covectors.
    """
    u = grid.values.ravel()
    density = np.exp(-grid.weight.ravel())
    lipschitz = 0.0
    for family in _families(grid):
        alphas = [C @ u for C in family.components]
        with np.errstate(invalid="ignore", divide="ignore"):
            fiber = np.nan_to_num(H.fiber_hessian_on(family.coords, alphas), nan=0.0, posinf=0.0, neginf=0.0)
        fiber = np.moveaxis(fiber, -1, 0)
        lipschitz = max(lipschitz, float(np.max(np.linalg.eigvalsh(0.5 * (fiber + np.swapaxes(fiber, 1, 2))))))
    lipschitz = max(lipschitz, 1e-12) * coefficient
    ratio = float(np.max(density) / np.min(density))
    return 2.0 * grid.spacing**2 / ((3 + grid.dim) * lipschitz * ratio)


# explicit heat flow


@dataclass(frozen=True)
class FlowDiagnostics:
    times: np.ndarray
    mass: np.ndarray
    energy: np.ndarray
    entropy: np.ndarray
    slope: np.ndarray

    def rows(self) -> List[Tuple[float, float, float, float, float]]:
        return list(zip(self.times, self.mass, self.energy, self.entropy, self.slope))


@dataclass(frozen=True)
class GridFlow:
    """A grid evolution: the final field, per-step diagnostics and recorded snapshots."""

    final: GridField
    diagnostics: FlowDiagnostics
    snapshots: List[GridField] = field(default_factory=list)
    snapshot_times: List[float] = field(default_factory=list)
    dissipation: Optional[np.ndarray] = None

    @property
    def mass_drift(self) -> float:
        mass = self.diagnostics.mass
        return float(np.max(np.abs(mass - mass[0])) / max(abs(mass[0]), 1e-300))


def _uniform_steps(T: float, dt: float) -> Tuple[int, float]:
    steps = max(1, int(math.ceil(T / dt - 1e-9)))
    return steps, T / steps


def _collect(times, mass, energy, entropy, slope) -> FlowDiagnostics:
    return FlowDiagnostics(*(np.asarray(v, dtype=float) for v in (times, mass, energy, entropy, slope)))


def heat_solve_explicit(
    H: ChartHamiltonian,
    field0: GridField,
    T: float,
    dt: Optional[float] = None,
    safety: float = STABILITY_SAFETY,
    snapshot_every: int = 0,
) -> GridFlow:
    """
    Forward Euler for du/dt = Delta^H_m u.

    Raises:
        StabilityError: If the energy increases beyond roundoff in some step
    """
    _check_dimension(H, field0)
    limit = stability_bound(H, field0)
    steps, dt = _uniform_steps(T, dt if dt is not None else safety * limit)
    if dt > limit:
        logger.warning(f"time step {dt:.3e} exceeds the estimated stability bound {limit:.3e}")
    mass_c = field0.cell_mass.ravel()
    u = field0.values.ravel().copy()

    energy = _energy(H, field0, u)
    times, masses, energies, entropies, slopes = [0.0], [], [], [], []
    snapshots, snapshot_times = [field0], [0.0]
    for step in range(steps + 1):
        lap = -_energy_gradient(H, field0, u) / mass_c
        masses.append(float(np.sum(u * mass_c)))
        energies.append(energy)
        entropies.append(_entropy(field0, u))
        slopes.append(_l2_norm(field0, lap))
        if step == steps:
            break
        u = u + dt * lap
        new_energy = _energy(H, field0, u)
        if new_energy > energy + ENERGY_ROUNDOFF * (1.0 + abs(energy)):
            raise StabilityError(
                f"time step too large: energy rose from {energy:.6e} to {new_energy:.6e} at t={(step + 1) * dt:.6g}"
            )
        energy = new_energy
        times.append((step + 1) * dt)
        if snapshot_every and (step + 1) % snapshot_every == 0:
            snapshots.append(field0.with_values(u))
            snapshot_times.append(times[-1])

    final = field0.with_values(u)
    if snapshot_times[-1] != times[-1]:
        snapshots.append(final)
        snapshot_times.append(times[-1])
    logger.debug(f"explicit heat flow: {steps} steps of {dt:.3e} to T={T}")
    return GridFlow(final, _collect(times, masses, energies, entropies, slopes), snapshots, snapshot_times)


def contraction_profile(
    H: ChartHamiltonian, first: GridField, second: GridField, T: float, dt: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Times and L^2(m) distances of two explicit heat solutions advanced in lockstep."""
    if dt is None:
        dt = STABILITY_SAFETY * min(stability_bound(H, first), stability_bound(H, second))
    steps, dt = _uniform_steps(T, dt)
    mass_c = first.cell_mass.ravel()
    u = first.values.ravel().copy()
    v = second.values.ravel().copy()
    distances = [l2_distance(first, second)]
    for _ in range(steps):
        u = u - dt * _energy_gradient(H, first, u) / mass_c
        v = v - dt * _energy_gradient(H, second, v) / mass_c
        distances.append(_l2_norm(first, u - v))
    return dt * np.arange(steps + 1), np.array(distances)


# minimizing movement


def _minimize_convex(
    objective: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    hessian: Callable[[np.ndarray], sparse.spmatrix],
    x0: np.ndarray,
    metric: np.ndarray,
    tol: float = INNER_TOL,
) -> np.ndarray:
    """
    L-BFGS-B followed by a damped Newton polish. Converged when the L^2(m)
    gradient, grad / metric, is below ``tol`` in sup norm.

    Raises:
        InnerSolveError: If the polish cannot reach ``tol``
    """
    result = minimize(
        objective,
        x0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": LBFGS_MAX_ITER, "ftol": 0.0, "gtol": 0.1 * tol * float(np.min(metric)), "maxcor": 30},
    )
    x = result.x

    def residual_of(point: np.ndarray) -> Tuple[float, float]:
        value, gradient = objective(point)
        return value, float(np.max(np.abs(gradient / metric)))

    value, residual = residual_of(x)
    for iteration in range(NEWTON_MAX_ITER):
        if residual <= tol:
            logger.debug(f"inner solve converged after {result.nit} quasi-Newton and {iteration} Newton steps")
            return x
        _, gradient = objective(x)
        with np.errstate(all="ignore"):
            step = spsolve(sparse.csc_matrix(hessian(x)), gradient)
        if not np.all(np.isfinite(step)):
            break
        scale = 1.0
        while scale > 1e-6:
            trial = x - scale * step
            trial_value, trial_residual = residual_of(trial)
            if trial_residual < residual or trial_value < value:
                x, value, residual = trial, trial_value, trial_residual
                break
            scale *= 0.5
        else:
            break
    if residual <= tol:
        return x
    raise InnerSolveError(f"inner solve failed: gradient residual {residual:.3e}", residual=residual)


def minimizing_movement_step(H: ChartHamiltonian, field0: GridField, delta: float) -> GridField:
    """The minimizer of E(u) + ||u - u0||^2_{L^2(m)} / (2 delta)."""
    if delta <= 0:
        raise ValueError(f"minimizing movement step needs delta > 0, got {delta}")
    _check_dimension(H, field0)
    u0 = field0.values.ravel()
    mass_c = field0.cell_mass.ravel()

    def objective(u: np.ndarray) -> Tuple[float, np.ndarray]:
        diff = u - u0
        value = _energy(H, field0, u) + float(np.sum(mass_c * diff**2)) / (2.0 * delta)
        return value, _energy_gradient(H, field0, u) + mass_c * diff / delta

    def hessian(u: np.ndarray) -> sparse.spmatrix:
        return _energy_hessian(H, field0, u) + sparse.diags(mass_c / delta)

    return field0.with_values(_minimize_convex(objective, hessian, u0.copy(), mass_c))


def minimizing_movement(H: ChartHamiltonian, field0: GridField, T: float, k: int) -> GridField:
    """(U_{T/k})^k applied to field0."""
    current = field0
    for _ in range(k):
        current = minimizing_movement_step(H, current, T / k)
    return current


def mms_convergence_order(
    H: ChartHamiltonian,
    field0: GridField,
    T: float,
    ks: Sequence[int] = MMS_STEPS,
    reference: Optional[GridField] = None,
) -> Tuple[List[float], float]:
    """
    L^2(m) gaps between (U_{T/k})^k(u0) and the explicit solution at T,
    and the observed order log2(gap_k / gap_2k) on the finest pair.

    The default reference steps at T / (256 k_max) or finer.
    """
    if reference is None:
        dt = min(STABILITY_SAFETY * stability_bound(H, field0), T / (MMS_REFERENCE_REFINEMENT * max(ks)))
        reference = heat_solve_explicit(H, field0, T, dt=dt).final
    gaps = [l2_distance(minimizing_movement(H, field0, T, k), reference) for k in ks]
    order = math.log2(gaps[-2] / gaps[-1]) if gaps[-1] > 0 else math.inf
    logger.info(f"minimizing movement gaps {['%.3e' % g for g in gaps]}, observed order {order:.3f}")
    return gaps, order


# slope identity


@dataclass(frozen=True)
class SlopeReport:
    laplacian_norm: float
    metric_slope: float
    energy_slope: float

    @property
    def metric_error(self) -> float:
        return abs(self.metric_slope - self.laplacian_norm) / max(self.laplacian_norm, 1e-300)

    @property
    def energy_error(self) -> float:
        return abs(self.energy_slope - self.laplacian_norm**2) / max(self.laplacian_norm**2, 1e-300)


def _extrapolate_zero(values: Sequence[float]) -> float:
    q1, q2, q4 = values
    return (q1 - 6.0 * q2 + 8.0 * q4) / 3.0


def slope_and_identity_check(
    H: ChartHamiltonian, grid: GridField, deltas: Sequence[float] = SLOPE_DELTAS
) -> SlopeReport:
    """
    Extrapolated metric slope lim ||u_{t+d} - u_t|| / d and energy slope
    lim (E(u_t) - E(u_{t+d})) / d, compared with ||Delta^H_m u_t|| and its square.
    """
    if len(deltas) != 3 or not (deltas[0] > deltas[1] > deltas[2] > 0):
        raise ValueError("slope check needs three decreasing step sizes d, d/2, d/4")
    lap = discrete_laplacian(H, grid)
    norm = l2_distance(lap, grid.with_values(np.zeros(grid.shape)))
    energy = discrete_energy(H, grid)
    dt = STABILITY_SAFETY * stability_bound(H, grid)
    dt = min(dt, deltas[-1] / 8.0)

    metric, energetic = [], []
    for delta in deltas:
        later = heat_solve_explicit(H, grid, delta, dt=delta / math.ceil(delta / dt)).final
        metric.append(l2_distance(later, grid) / delta)
        energetic.append((energy - discrete_energy(H, later)) / delta)
    report = SlopeReport(norm, _extrapolate_zero(metric), _extrapolate_zero(energetic))
    logger.debug(f"slope check: |Delta u| {norm:.6e}, metric {report.metric_slope:.6e}, energy {report.energy_slope:.6e}")
    return report


# entropy gradient flow


def _face_density(rho_left: np.ndarray, rho_right: np.ndarray, mean: str) -> np.ndarray:
    if mean == "harmonic":
        return 2.0 * rho_left * rho_right / (rho_left + rho_right)
    gap = np.log(rho_right) - np.log(rho_left)
    close = np.abs(gap) < LOGMEAN_CUTOFF
    safe = np.where(close, 1.0, gap)
    return np.where(close, 0.5 * (rho_left + rho_right), (rho_right - rho_left) / safe)


def _entropy_rates(
    H: ChartHamiltonian, grid: GridField, rho: np.ndarray, mean: str
) -> Tuple[np.ndarray, float]:
    """d rho / dt and the dissipation sum of rho_f alpha . H_alpha(alpha) over faces, alpha = -D log rho."""
    density = np.exp(-grid.weight.ravel())
    log_rho = np.log(rho)
    flux_divergence = np.zeros(rho.size)
    dissipation = 0.0
    for axis, family in enumerate(_families(grid)):
        normal = family.components[axis].tocoo()
        first = normal.col[normal.data < 0][np.argsort(normal.row[normal.data < 0])]
        second = normal.col[normal.data > 0][np.argsort(normal.row[normal.data > 0])]
        rho_face = _face_density(rho[first], rho[second], mean)
        alphas = [-(C @ log_rho) for C in family.components]
        momentum = H.momentum_gradient_on(family.coords, alphas)
        w = family.average @ density
        for C, alpha, component in zip(family.components, alphas, momentum):
            flux_divergence += C.T @ (w * rho_face * component)
            dissipation += float(np.sum(w * rho_face * alpha * component))
    scale = grid.cell_volume / grid.dim
    return flux_divergence * scale / grid.cell_mass.ravel(), dissipation * scale


def entropy_flow_solve(
    H: ChartHamiltonian,
    rho0: GridField,
    T: float,
    dt: Optional[float] = None,
    floor: float = POSITIVITY_FLOOR,
    mean: str = "logmean",
    safety: float = STABILITY_SAFETY,
) -> GridFlow:
    """
    Forward Euler for d rho/dt = -div_m(rho grad[-log rho]) in flux form.

    Face densities use the logarithmic mean by default, so the quadratic
    Hamiltonian on a line reproduces the heat flow exactly; ``mean="harmonic"``
    selects the harmonic mean. The returned ``dissipation`` is the integral of
    H(-d log rho) + L(grad[-log rho]) against rho m at each recorded time.
    The diagnostics' ``energy`` is the Dirichlet energy E(rho) of the density.

    Raises:
        PositivityError: If rho drops below ``floor``
    """
    _check_dimension(H, rho0)
    if mean not in ("logmean", "harmonic"):
        raise ValueError(f"Unknown face mean {mean!r}")
    rho = rho0.values.ravel().copy()
    if np.min(rho) <= floor:
        raise PositivityError(f"positivity lost; refine or shorten horizon (initial min {np.min(rho):.3e})")
    if dt is None:
        spread = float(np.max(rho) / np.min(rho))
        dt = safety * stability_bound(H, rho0.with_values(np.log(rho).reshape(rho0.shape)), coefficient=spread)
    steps, dt = _uniform_steps(T, dt)
    mass_c = rho0.cell_mass.ravel()

    times, masses, energies, entropies, slopes, dissipations = [0.0], [], [], [], [], []
    for step in range(steps + 1):
        rate, dissipation = _entropy_rates(H, rho0, rho, mean)
        masses.append(float(np.sum(rho * mass_c)))
        energies.append(_energy(H, rho0, rho))
        entropies.append(_entropy(rho0, rho))
        slopes.append(_l2_norm(rho0, rate))
        dissipations.append(dissipation)
        if step == steps:
            break
        rho = rho + dt * rate
        if np.min(rho) <= floor:
            raise PositivityError(
                f"positivity lost; refine or shorten horizon (min {np.min(rho):.3e} at t={(step + 1) * dt:.6g})"
            )
        times.append((step + 1) * dt)

    final = rho0.with_values(rho)
    logger.debug(f"entropy flow: {steps} steps of {dt:.3e} to T={T}")
    return GridFlow(
        final,
        _collect(times, masses, energies, entropies, slopes),
        [rho0, final],
        [0.0, times[-1]],
        dissipation=np.array(dissipations),
    )


def dissipation_identity_error(flow: GridFlow) -> float:
    """Largest relative gap between -dEnt/dt, by centered differences, and the dissipation integral."""
    if flow.dissipation is None:
        raise ValueError("flow carries no dissipation record")
    times = flow.diagnostics.times
    if len(times) < 3:
        raise ValueError("dissipation identity needs at least two steps")
    rate = np.gradient(flow.diagnostics.entropy, times)
    gap = np.abs(rate + flow.dissipation) / np.maximum(np.abs(flow.dissipation), 1e-300)
    return float(np.max(gap[1:-1]))


# Dirichlet problem


def dirichlet_harmonic(
    H: ChartHamiltonian, grid: GridField, mask: np.ndarray, tol: float = INNER_TOL
) -> GridField:
    """
    Minimize E over the cells outside ``mask``, keeping the masked cells at
    their current values; the interior discrete Laplacian then vanishes to ``tol``.
    """
    _check_dimension(H, grid)
    mask = np.asarray(mask, dtype=bool).reshape(grid.shape)
    if not mask.any():
        raise ValueError("Dirichlet problem needs a nonempty boundary mask")
    free = ~mask.ravel()
    base = grid.values.ravel().copy()
    mass_c = grid.cell_mass.ravel()

    def expand(interior: np.ndarray) -> np.ndarray:
        values = base.copy()
        values[free] = interior
        return values

    def objective(interior: np.ndarray) -> Tuple[float, np.ndarray]:
        u = expand(interior)
        return _energy(H, grid, u), _energy_gradient(H, grid, u)[free]

    def hessian(interior: np.ndarray) -> sparse.spmatrix:
        full = _energy_hessian(H, grid, expand(interior)).tocsr()
        return full[free][:, free]

    interior = _minimize_convex(objective, hessian, base[free], mass_c[free], tol=tol)
    return grid.with_values(expand(interior))


def interior_residual(H: ChartHamiltonian, grid: GridField, mask: np.ndarray) -> float:
    """Sup of the discrete Laplacian outside ``mask``."""
    lap = discrete_laplacian(H, grid).values
    return float(np.max(np.abs(lap[~np.asarray(mask, dtype=bool)])))


# snapshots


DIAGNOSTIC_COLUMNS = ("t", "mass", "energy", "entropy", "slope")
# an entropy flow records the Dirichlet energy of rho; the flow itself decreases the entropy column
ENTROPY_FLOW_COLUMNS = ("t", "mass", "dirichlet_energy", "entropy", "slope", "dissipation")


def write_snapshot(grid: GridField, path: Path) -> Path:
    """Raw little-endian float64 values at ``path`` with a JSON sidecar next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid.values.astype("<f8").tofile(path)
    sidecar = {
        "shape": list(grid.shape),
        "spacing": grid.spacing,
        "origin": list(grid.origin),
        "periodic": grid.periodic,
        "weight": grid.weight.ravel().tolist(),
        "dtype": "<f8",
    }
    sidecar_path = path.with_suffix(".json")
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return sidecar_path


def read_snapshot(path: Path) -> GridField:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    shape = tuple(sidecar["shape"])
    values = np.fromfile(path, dtype=sidecar["dtype"]).reshape(shape)
    weight = np.asarray(sidecar["weight"], dtype=float).reshape(shape)
    return GridField(values, sidecar["spacing"], weight, tuple(sidecar["origin"]), sidecar["periodic"])
