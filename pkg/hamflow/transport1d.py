"""
Optimal transport on the line for translation-invariant Lagrangian costs.

Monotone rearrangement gives the optimal map for costs convex in y - x.
Displacement interpolation moves cell edges and keeps cell masses, so the
discrete change of variables holds exactly; the continuous Jacobian
exp(psi(x) - psi(T_t x)) T_t'(x) is reported next to it.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from scipy.interpolate import PchipInterpolator
from scipy.optimize import linprog
from scipy.special import rel_entr

from .errors import (
    CDFInversionError,
    DensityError,
    InjectivityError,
    LegendreError,
    TranslationInvarianceError,
)
from .hamiltonians import LEGENDRE_MAX_ITER, LEGENDRE_TOL, ChartHamiltonian, is_two_homogeneous

logger = logging.getLogger(__name__)

QUADRATURE_POINTS = 4
MASS_TOL = 1e-10
ATOM_FRACTION = 0.25
DEFAULT_CELLS = 8192
DEFAULT_INTERVAL = (-10.0, 10.0)
DERIVATIVE_STEP = 1e-3
PSI_STEP = 1e-5
DENT_ALLOWANCE = 1e-6
KCONV_TOL = 1e-6
INDEPENDENT_SAMPLES = 256

Profile = Callable[[np.ndarray], np.ndarray]


def lebesgue_psi(x: np.ndarray) -> np.ndarray:
    return np.zeros_like(np.asarray(x, dtype=float))


def gaussian_psi(x: np.ndarray) -> np.ndarray:
    """Weight of the standard Gaussian probability measure."""
    x = np.asarray(x, dtype=float)
    return 0.5 * x**2 + 0.5 * math.log(2.0 * math.pi)


def uniform_edges(lower: float = DEFAULT_INTERVAL[0], upper: float = DEFAULT_INTERVAL[1], cells: int = DEFAULT_CELLS) -> np.ndarray:
    return np.linspace(lower, upper, cells + 1)


def _cell_integrals(edges: np.ndarray, f: Profile) -> np.ndarray:
    """Gauss-Legendre integrals of f over each cell."""
    nodes, weights = np.polynomial.legendre.leggauss(QUADRATURE_POINTS)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    points = mid[:, None] + half[:, None] * nodes[None, :]
    return np.sum(weights[None, :] * f(points), axis=1) * half


@dataclass(frozen=True)
class DensityProfile:
    """A probability measure mu with cell masses on a partition, against m = exp(-psi) dx."""

    edges: np.ndarray
    masses: np.ndarray
    reference_masses: np.ndarray
    psi: Profile = lebesgue_psi

    def __post_init__(self):
        for name in ("edges", "masses", "reference_masses"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if len(self.edges) != len(self.masses) + 1 or len(self.masses) != len(self.reference_masses):
            raise DensityError("invalid profile: edges, masses and reference masses disagree in length")
        errors = []
        if np.any(np.diff(self.edges) < 0):
            errors.append("edges must be non-decreasing")
        if np.any(self.masses < 0):
            errors.append("masses must be nonnegative")
        if abs(float(np.sum(self.masses)) - 1.0) > MASS_TOL:
            errors.append(f"total mass {np.sum(self.masses):.12f} is not 1")
        if np.any((self.masses > 0) & (self.reference_masses <= 0)):
            errors.append("mu is not absolutely continuous with respect to m")
        if errors:
            raise DensityError("invalid profile:\n" + "\n".join(f"  - {error}" for error in errors))

    @classmethod
    def from_density(cls, edges: np.ndarray, density: Profile, psi: Profile = lebesgue_psi) -> "DensityProfile":
        """Normalized cell masses of ``density`` dx, with reference masses of exp(-psi) dx."""
        edges = np.asarray(edges, dtype=float)
        masses = np.clip(_cell_integrals(edges, density), 0.0, None)
        total = float(np.sum(masses))
        if not total > 0:
            raise DensityError("invalid profile: density has no mass on the grid")
        reference = _cell_integrals(edges, lambda x: np.exp(-psi(x)))
        return cls(edges, masses / total, reference, psi)

    @classmethod
    def reference(cls, edges: np.ndarray, psi: Profile) -> "DensityProfile":
        """The measure m itself, normalized."""
        return cls.from_density(edges, lambda x: np.exp(-psi(x)), psi)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @cached_property
    def rho(self) -> np.ndarray:
        """Density of mu against m, 0 on cells without reference mass."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.reference_masses > 0, self.masses / self.reference_masses, 0.0)

    @cached_property
    def cdf(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.masses)])

    @cached_property
    def survival(self) -> np.ndarray:
        """1 - cdf, accumulated from the right so tail masses keep their precision."""
        return np.concatenate([np.cumsum(self.masses[::-1])[::-1], [0.0]])

    @property
    def reference_total(self) -> float:
        return float(np.sum(self.reference_masses))


def gaussian_profile(
    mean: float = 0.0,
    std: float = 1.0,
    edges: Optional[np.ndarray] = None,
    psi: Profile = gaussian_psi,
    quartic: float = 0.0,
) -> DensityProfile:
    """N(mean, std^2) on ``edges``, optionally perturbed by exp(-quartic x^4)."""
    edges = uniform_edges() if edges is None else edges

    def density(x: np.ndarray) -> np.ndarray:
        return np.exp(-0.5 * ((x - mean) / std) ** 2 - quartic * x**4)

    return DensityProfile.from_density(edges, density, psi)


# Lagrangians on the line


class Lagrangian1D:
    """A convex, translation-invariant Lagrangian L(v) with its Legendre map tau(v) = L'(v)."""

    def __init__(
        self,
        name: str,
        value: Callable[[np.ndarray], np.ndarray],
        tau: Callable[[np.ndarray], np.ndarray],
        hamiltonian: Optional[ChartHamiltonian] = None,
    ):
        self.name = name
        self._value = value
        self._tau = tau
        self.hamiltonian = hamiltonian

    def __repr__(self) -> str:
        return f"Lagrangian1D({self.name!r})"

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self._value(np.asarray(v, dtype=float))

    def tau(self, v: np.ndarray) -> np.ndarray:
        """The covector dual to the velocity v."""
        return self._tau(np.asarray(v, dtype=float))

    def dual_value(self, v: np.ndarray) -> np.ndarray:
        """H(tau(v)) = v tau(v) - L(v)."""
        v = np.asarray(v, dtype=float)
        return v * self.tau(v) - self(v)

    @classmethod
    def from_expression(cls, expr: str) -> "Lagrangian1D":
        """
        Build from an expression in ``v``, e.g. "v**2/2" or "abs(v)**3/3".

        Raises:
            TranslationInvarianceError: If the expression involves anything besides v
        """
        v = sp.Symbol("v", real=True)
        parsed = sp.sympify(expr, locals={"v": v})
        if parsed.free_symbols - {v}:
            raise TranslationInvarianceError(
                f"1D closed form requires translation invariance: {expr} depends on "
                f"{sorted(str(s) for s in parsed.free_symbols - {v})}"
            )
        value = sp.lambdify(v, parsed, modules="numpy")
        tau = sp.lambdify(v, sp.diff(parsed, v), modules="numpy")
        return cls(
            str(parsed),
            lambda x: np.broadcast_to(value(x), np.shape(x)).astype(float),
            lambda x: np.broadcast_to(tau(x), np.shape(x)).astype(float),
        )

    @classmethod
    def from_hamiltonian(cls, H: ChartHamiltonian) -> "Lagrangian1D":
        """
        The Fenchel conjugate of a 1D Hamiltonian, by vectorized safeguarded Newton.

        Raises:
            TranslationInvarianceError: If H depends on position or n != 1
        """
        if H.n != 1 or H.depends_on_position:
            raise TranslationInvarianceError(
                f"1D closed form requires translation invariance: {H.name} has n={H.n} "
                f"and depends on position: {H.depends_on_position}"
            )

        def tau(v: np.ndarray) -> np.ndarray:
            return _legendre_on_line(H, v)

        def value(v: np.ndarray) -> np.ndarray:
            alpha = tau(v)
            return alpha * v - H.value_on([np.zeros_like(alpha)], [alpha])

        return cls(f"L[{H.name}]", value, tau, hamiltonian=H)


def _momentum_on_line(H: ChartHamiltonian, alpha: np.ndarray) -> np.ndarray:
    return H.momentum_gradient_on([np.zeros_like(alpha)], [alpha])[0]


def _legendre_on_line(H: ChartHamiltonian, v: np.ndarray) -> np.ndarray:
    """Solve H'(alpha) = v componentwise inside a doubling bracket."""
    v = np.asarray(v, dtype=float)
    flat = v.ravel()
    bound = max(1.0, float(np.max(np.abs(flat))) if flat.size else 1.0)
    for _ in range(200):
        if _momentum_on_line(H, np.array([bound]))[0] >= np.max(flat, initial=0.0) and _momentum_on_line(
            H, np.array([-bound])
        )[0] <= np.min(flat, initial=0.0):
            break
        bound *= 2.0
    else:
        raise LegendreError(f"non-coercive Hamiltonian {H.name}: no bracket for |v| <= {np.max(np.abs(flat))}")

    lower = np.full_like(flat, -bound)
    upper = np.full_like(flat, bound)
    alpha = np.clip(flat, lower, upper)
    x = np.zeros_like(flat)
    for _ in range(LEGENDRE_MAX_ITER):
        residual = _momentum_on_line(H, alpha) - flat
        if np.all(np.abs(residual) <= LEGENDRE_TOL * (1.0 + np.abs(flat))):
            return alpha.reshape(v.shape)
        upper = np.where(residual > 0, alpha, upper)
        lower = np.where(residual <= 0, alpha, lower)
        with np.errstate(all="ignore"):
            slope = H.fiber_hessian_on([x], [alpha])[0, 0] * np.ones_like(alpha)
            newton = alpha - residual / slope
        inside = np.isfinite(newton) & (newton > lower) & (newton < upper)
        alpha = np.where(inside, newton, 0.5 * (lower + upper))
    residual = _momentum_on_line(H, alpha) - flat
    if np.all(np.abs(residual) <= 1e3 * LEGENDRE_TOL * (1.0 + np.abs(flat))):
        return alpha.reshape(v.shape)
    raise LegendreError(f"ill-conditioned Hamiltonian {H.name}: residual {np.max(np.abs(residual)):.3e}")


def cost_cT(L: Lagrangian1D, x: np.ndarray, y: np.ndarray, T: float) -> np.ndarray:
    """c^L_T(x, y) = T L((y - x) / T), attained by the constant-speed line."""
    if T <= 0:
        raise ValueError(f"Transport horizon must be positive, got {T}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return T * L((y - x) / T)


# monotone transport


def _log_inverse(levels: np.ndarray, positions: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Inverse of a non-decreasing level function known at ``positions``, interpolated in log levels."""
    positive = levels > 0
    start = int(np.argmax(positive))
    logs, first = np.unique(np.log(levels[positive]), return_index=True)
    knots = positions[positive][first]
    floor = positions[start - 1] if start > 0 else positions[0]
    if len(logs) < 2:
        return lambda q: np.full(np.shape(q), floor)
    spline = PchipInterpolator(logs, knots, extrapolate=False)

    def inverse(q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        result = np.full(q.shape, floor)
        live = q > 0
        result[live] = spline(np.clip(np.log(q[live]), logs[0], logs[-1]))
        return result

    return inverse


def _quantile_map(mu: DensityProfile, nu: DensityProfile) -> np.ndarray:
    """G^{-1}(F(x)) at mu's edges, using the lower cdf below 1/2 and the survival function above."""
    lower = _log_inverse(nu.cdf, nu.edges)
    upper_rev = _log_inverse(nu.survival[::-1], nu.edges[::-1])
    mapped = np.empty_like(mu.edges)
    use_lower = mu.cdf <= 0.5
    mapped[use_lower] = lower(mu.cdf[use_lower])
    mapped[~use_lower] = upper_rev(mu.survival[~use_lower])
    return np.maximum.accumulate(mapped)


@dataclass(frozen=True)
class TransportPlan1D:
    """The monotone map from ``source`` to ``target``, stored at the source's edges."""

    source: DensityProfile
    target: DensityProfile
    map_edges: np.ndarray
    horizon: float
    lagrangian: Lagrangian1D

    @property
    def map_centers(self) -> np.ndarray:
        return 0.5 * (self.map_edges[1:] + self.map_edges[:-1])

    @property
    def velocity(self) -> np.ndarray:
        """grad phi = (T(x) - x) / horizon at the source's cell centers."""
        return (self.map_centers - self.source.centers) / self.horizon

    @property
    def dphi(self) -> np.ndarray:
        return self.lagrangian.tau(self.velocity)

    @property
    def cost(self) -> float:
        """Integral of c^L_T(x, T(x)) against the source."""
        costs = cost_cT(self.lagrangian, self.source.centers, self.map_centers, self.horizon)
        return float(np.sum(self.source.masses * costs))

    def independent_cost(self, samples: int = INDEPENDENT_SAMPLES) -> float:
        """Cost of the product coupling, on quantile samples of both marginals."""
        levels = (np.arange(samples) + 0.5) / samples
        xs = np.interp(levels, self.source.cdf, self.source.edges)
        ys = np.interp(levels, self.target.cdf, self.target.edges)
        return float(np.mean(cost_cT(self.lagrangian, xs[:, None], ys[None, :], self.horizon)))


def monotone_transport(
    mu: DensityProfile, nu: DensityProfile, L: Lagrangian1D, T: float = 1.0
) -> TransportPlan1D:
    """
    T = G^{-1} o F for the cdfs F of mu and G of nu.

    Raises:
        CDFInversionError: If nu carries an atom the grid cannot resolve
    """
    heaviest = float(np.max(nu.masses))
    if heaviest > ATOM_FRACTION:
        raise CDFInversionError(
            f"CDF inversion ill-posed at resolution: a target cell carries mass {heaviest:.3f}"
        )
    plan = TransportPlan1D(mu, nu, _quantile_map(mu, nu), T, L)
    logger.debug(f"monotone transport with {L.name}: cost {plan.cost:.6e}")
    return plan


# displacement interpolation


@dataclass(frozen=True)
class Interpolant:
    profile: DensityProfile
    discrete_jacobian: np.ndarray
    continuous_jacobian: np.ndarray

    @property
    def jacobian_error(self) -> float:
        """Largest gap between the discrete and continuous Jacobians on cells carrying mass."""
        live = self.profile.masses > 0
        gap = np.abs(self.discrete_jacobian - self.continuous_jacobian)[live]
        return float(np.max(gap)) if gap.size else 0.0


def _psi_derivative(psi: Profile, x: np.ndarray) -> np.ndarray:
    return (psi(x + PSI_STEP) - psi(x - PSI_STEP)) / (2.0 * PSI_STEP)


def displacement_interpolation(plan: TransportPlan1D, t: float) -> Interpolant:
    """
    mu_t = (T_t)_# mu with T_t(x) = x + (t/T)(T(x) - x), cell masses carried along.

    Raises:
        InjectivityError: If a cell carrying mass collapses or flips
    """
    if not 0 <= t <= plan.horizon:
        raise ValueError(f"Interpolation time must lie in [0, {plan.horizon}], got {t}")
    source = plan.source
    fraction = t / plan.horizon
    edges_t = source.edges + fraction * (plan.map_edges - source.edges)
    widths_t = np.diff(edges_t)
    collapsed = (widths_t <= 0) & (source.masses > 0)
    if np.any(collapsed):
        where = source.centers[np.argmax(collapsed)]
        raise InjectivityError(f"interpolation loses injectivity at x={where:.6g}, t={t}")

    reference_t = _cell_integrals(edges_t, lambda x: np.exp(-source.psi(x)))
    with np.errstate(divide="ignore", invalid="ignore"):
        discrete = np.where(source.reference_masses > 0, reference_t / source.reference_masses, 0.0)
    centers_t = 0.5 * (edges_t[1:] + edges_t[:-1])
    continuous = np.exp(source.psi(source.centers) - source.psi(centers_t)) * widths_t / source.widths
    profile = DensityProfile(edges_t, source.masses, reference_t, source.psi)
    if abs(float(np.sum(profile.masses)) - 1.0) > MASS_TOL:
        raise DensityError(f"invalid profile: interpolated mass {np.sum(profile.masses):.12f}")
    return Interpolant(profile, discrete, continuous)


def change_of_variables_check(
    plan: TransportPlan1D, t: float, f: Callable[[np.ndarray], np.ndarray]
) -> Tuple[float, float, float]:
    """
    Both sides of int f(rho_t) dm = int f(rho_0 / D_t) D_t dm and the continuous Jacobian error.

    ``f`` must satisfy f(0) = 0.
    """
    interpolant = displacement_interpolation(plan, t)
    moved = interpolant.profile
    source = plan.source
    live = moved.reference_masses > 0
    lhs = float(np.sum(moved.reference_masses[live] * f(moved.rho[live])))
    D = interpolant.discrete_jacobian
    live = (source.reference_masses > 0) & (D > 0)
    rhs = float(np.sum(source.reference_masses[live] * f(source.rho[live] / D[live]) * D[live]))
    return lhs, rhs, interpolant.jacobian_error


# functionals


def entropy(mu: DensityProfile) -> float:
    """Ent_m(mu) = int rho log rho dm."""
    return float(np.sum(rel_entr(mu.masses, mu.reference_masses)))


def _support(mu: DensityProfile, cutoff: float = 0.0) -> np.ndarray:
    return mu.masses > cutoff


def _log_density_slope(mu: DensityProfile) -> np.ndarray:
    """d log rho / dx at cell centers, with rho checked positive between the ends of the support."""
    live = np.flatnonzero(_support(mu))
    first, last = live[0], live[-1]
    inside = slice(first, last + 1)
    rho = mu.rho[inside]
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise DensityError("Fisher integral unreliable: density touches 0 inside its support")
    slope = np.zeros_like(mu.rho)
    if last - first >= 2:
        slope[inside] = np.gradient(np.log(rho), mu.centers[inside])
    return slope


def fisher_information(H: ChartHamiltonian, mu: DensityProfile) -> float:
    """I_m(mu) = int H(-d log rho) dmu.

    Raises:
        DensityError: If rho vanishes inside the support
    """
    alpha = -_log_density_slope(mu)
    values = H.value_on([mu.centers], [alpha])
    return float(np.sum(mu.masses * values))


def transport_costs(H: Optional[ChartHamiltonian], L: Lagrangian1D, plan: TransportPlan1D) -> Tuple[float, float]:
    """(C^L_T, C^H_T) with C^H_T = T int H(dphi) dmu_0, by direct quadrature of H when given."""
    mu = plan.source
    cost_L = plan.horizon * float(np.sum(mu.masses * L(plan.velocity)))
    if H is not None:
        dual = H.value_on([mu.centers], [plan.dphi])
    else:
        dual = L.dual_value(plan.velocity)
    cost_H = plan.horizon * float(np.sum(mu.masses * dual))
    return cost_L, cost_H


# inequalities


def _entropy_along(plan: TransportPlan1D, times: Sequence[float]) -> Dict[float, float]:
    return {t: entropy(displacement_interpolation(plan, t).profile) for t in sorted(set(times))}


def k_convexity_check(
    H: Optional[ChartHamiltonian],
    plan: TransportPlan1D,
    K: float,
    endpoints: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
    fractions: Sequence[float] = (0.25, 0.5, 0.75),
) -> float:
    """
    Worst defect of Ent(mu_{(1-s)a+sb}) <= (1-s)Ent(mu_a) + s Ent(mu_b) - (K/2)(1-s)s(b-a)^2 int H(dphi) dmu_0
    over endpoint pairs a < b (as fractions of the horizon) and interior fractions s.
    """
    T = plan.horizon
    mu = plan.source
    dual = H.value_on([mu.centers], [plan.dphi]) if H is not None else plan.lagrangian.dual_value(plan.velocity)
    action = float(np.sum(mu.masses * dual))
    pairs = [(a * T, b * T) for i, a in enumerate(endpoints) for b in endpoints[i + 1 :]]
    times = [t for a, b in pairs for t in (a, b)]
    times += [(1 - s) * a + s * b for a, b in pairs for s in fractions]
    ent = _entropy_along(plan, times)

    worst = -math.inf
    for a, b in pairs:
        for s in fractions:
            lhs = ent[(1 - s) * a + s * b]
            rhs = (1 - s) * ent[a] + s * ent[b] - 0.5 * K * (1 - s) * s * (b - a) ** 2 * action
            worst = max(worst, lhs - rhs)
    logger.debug(f"K-convexity (K={K}): worst defect {worst:.3e}")
    return worst


@dataclass(frozen=True)
class EntropyDerivative:
    lhs: float
    rhs: float
    jacobian_rate_error: float

    @property
    def slack(self) -> float:
        return self.lhs - self.rhs


def entropy_derivative_check(plan: TransportPlan1D, step: float = DERIVATIVE_STEP) -> EntropyDerivative:
    """
    One-sided slope of Ent(mu_t) at 0+ against int (d rho / rho)(grad phi) dmu_0,
    and the pointwise rate (D_m[T_t] - 1)/t against Delta_m phi = v' - v psi'.
    """
    mu = plan.source
    delta = step * plan.horizon
    ent = _entropy_along(plan, (0.0, delta, 2.0 * delta))
    lhs = (-3.0 * ent[0.0] + 4.0 * ent[delta] - ent[2.0 * delta]) / (2.0 * delta)

    slope = _log_density_slope(mu)
    live = _support(mu)
    rhs = float(np.sum(mu.masses[live] * slope[live] * plan.velocity[live]))

    interpolant = displacement_interpolation(plan, delta)
    rate = (interpolant.continuous_jacobian - 1.0) / delta
    displacement = (plan.map_edges - mu.edges) / plan.horizon
    v_prime = np.diff(displacement) / mu.widths
    laplacian = v_prime - plan.velocity * _psi_derivative(mu.psi, mu.centers)
    bulk = mu.masses > 1e-8
    rate_error = float(np.max(np.abs(rate - laplacian)[bulk])) if bulk.any() else 0.0
    return EntropyDerivative(lhs, rhs, rate_error)


@dataclass(frozen=True)
class FunctionalInequalities:
    entropy: float
    fisher: float
    cost_L: float
    cost_H: float
    talagrand_slack: float
    hwi_slack: float
    sharper_hwi_slack: Optional[float] = None
    log_sobolev_slack: Optional[float] = None

    def rows(self) -> List[Tuple[str, float, float, float]]:
        """(inequality, lhs, rhs, slack) rows; lhs <= rhs is the claim."""
        rows = [
            ("talagrand", self.cost_H, self.cost_H + self.talagrand_slack, self.talagrand_slack),
            ("hwi", self.entropy, self.entropy + self.hwi_slack, self.hwi_slack),
        ]
        if self.sharper_hwi_slack is not None:
            rows.append(("hwi_homogeneous", self.entropy, self.entropy + self.sharper_hwi_slack, self.sharper_hwi_slack))
        if self.log_sobolev_slack is not None:
            rows.append(("log_sobolev", self.entropy, self.entropy + self.log_sobolev_slack, self.log_sobolev_slack))
        return rows


def talagrand_hwi_check(
    H: ChartHamiltonian,
    L: Lagrangian1D,
    mu: DensityProfile,
    m: DensityProfile,
    T: float = 1.0,
    K: float = 1.0,
) -> FunctionalInequalities:
    """
    Talagrand C^H_T(mu, m) <= (2 / KT) Ent(mu) and HWI
    Ent(mu) <= T I_m(mu) + T int L(grad phi) dmu - (KT/2) C^H_T(mu, m),
    for the plan from mu to the probability reference m. For 2-homogeneous H
    also Ent <= 2 sqrt(I C^L_1) - (K/2) C^H_1 and Ent <= (2/K) I.
    """
    if abs(m.reference_total - 1.0) > 1e-8:
        raise DensityError(f"invalid profile: reference measure has mass {m.reference_total:.10f}, expected 1")
    if K <= 0:
        raise ValueError(f"Talagrand and HWI need K > 0, got {K}")
    plan = monotone_transport(mu, m, L, T)
    ent = entropy(mu)
    fisher = fisher_information(H, mu)
    cost_L, cost_H = transport_costs(H, L, plan)
    talagrand = 2.0 / (K * T) * ent - cost_H
    hwi = T * fisher + cost_L - 0.5 * K * T * cost_H - ent

    sharper = log_sobolev = None
    if is_two_homogeneous(H):
        unit = monotone_transport(mu, m, L, 1.0)
        unit_L, unit_H = transport_costs(H, L, unit)
        sharper = 2.0 * math.sqrt(max(fisher * unit_L, 0.0)) - 0.5 * K * unit_H - ent
        log_sobolev = 2.0 / K * fisher - ent
    return FunctionalInequalities(ent, fisher, cost_L, cost_H, talagrand, hwi, sharper, log_sobolev)


# discrete oracle


def discrete_monotone_cost(
    mu: DensityProfile, nu: DensityProfile, L: Lagrangian1D, T: float = 1.0
) -> float:
    """Cost of the north-west corner coupling of the cell atoms, which is the monotone one."""
    x, y = mu.centers, nu.centers
    a, b = mu.masses.copy(), nu.masses.copy()
    i = j = 0
    total = 0.0
    while i < len(a) and j < len(b):
        moved = min(a[i], b[j])
        total += moved * float(cost_cT(L, x[i], y[j], T))
        a[i] -= moved
        b[j] -= moved
        if a[i] <= b[j]:
            i += 1
        else:
            j += 1
    return total


def discrete_optimal_cost(mu: DensityProfile, nu: DensityProfile, L: Lagrangian1D, T: float = 1.0) -> float:
    """Minimum cost over all couplings of the cell atoms, by linear programming."""
    k, l = len(mu.masses), len(nu.masses)
    if k * l > 144:
        raise ValueError(f"discrete oracle is limited to 12 x 12 instances, got {k} x {l}")
    costs = cost_cT(L, mu.centers[:, None], nu.centers[None, :], T).ravel()
    rows = np.kron(np.eye(k), np.ones((1, l)))
    cols = np.kron(np.ones((1, k)), np.eye(l))
    result = linprog(
        costs,
        A_eq=np.vstack([rows, cols]),
        b_eq=np.concatenate([mu.masses, nu.masses]),
        bounds=(0, None),
        method="highs",
    )
    if not result.success:
        raise DensityError(f"discrete transport problem infeasible: {result.message}")
    return float(result.fun)
