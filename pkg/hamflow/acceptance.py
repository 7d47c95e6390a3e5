"""Acceptance criteria: named, self-contained numerical checks with thresholds."""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from tqdm import tqdm

from .comparison import (
    bochner_residual,
    curvature_oracle,
    laplacian_comparison_check,
    mcp_ratio_check,
    riccati_residual,
)
from .errors import AcceptanceFilterError, HamflowError
from .experiments import boundary_mask
from .flow import variational_flow
from .frames import (
    canonical_frame,
    curvature_coordinate_formula,
    curvature_report,
    fconv_scaling_check,
    gauge_uniqueness_drift,
    time_shift_defect,
)
from .hamiltonians import CotangentState, WeightField, builtin
from .heatgrid import (
    GridField,
    contraction_profile,
    dirichlet_harmonic,
    dissipation_identity_error,
    entropy_flow_solve,
    heat_solve_explicit,
    interior_residual,
    l2_distance,
    mms_convergence_order,
    slope_and_identity_check,
)
from .laplacian import scalar_field
from .transport1d import (
    DensityProfile,
    Lagrangian1D,
    change_of_variables_check,
    discrete_monotone_cost,
    discrete_optimal_cost,
    entropy_derivative_check,
    gaussian_profile,
    gaussian_psi,
    k_convexity_check,
    lebesgue_psi,
    monotone_transport,
    talagrand_hwi_check,
    uniform_edges,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Measurement:
    """A measured value against its threshold; ``comparison`` is "<=" or ">="."""

    name: str
    value: float
    threshold: float
    comparison: str = "<="

    def scaled(self, factor: float) -> "Measurement":
        """Loosen the threshold by ``factor``."""
        if self.comparison == "<=":
            threshold = self.threshold * factor if self.threshold > 0 else self.threshold
        elif self.threshold < 0:
            threshold = self.threshold * factor
        else:
            threshold = self.threshold / factor
        return Measurement(self.name, self.value, threshold, self.comparison)

    @property
    def passed(self) -> bool:
        if math.isnan(self.value):
            return False
        if self.comparison == "<=":
            return self.value <= self.threshold
        return self.value >= self.threshold


@dataclass(frozen=True)
class Criterion:
    name: str
    title: str
    budget: float
    fn: Callable[[], List[Measurement]]


@dataclass
class CriterionResult:
    name: str
    measurements: List[Measurement] = field(default_factory=list)
    runtime: float = 0.0
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(m.passed for m in self.measurements)


CRITERIA: Dict[str, Criterion] = {}


def criterion(name: str, title: str, budget: float) -> Callable:
    """Register an acceptance check under ``name`` with a runtime budget in seconds."""

    def register(fn: Callable[[], List[Measurement]]) -> Callable[[], List[Measurement]]:
        CRITERIA[name] = Criterion(name, title, budget, fn)
        return fn

    return register


def available_criteria() -> List[str]:
    return list(CRITERIA)


# curvature


def _unit(H, x, direction) -> CotangentState:
    alpha = np.asarray(direction, dtype=float)
    level = H.value(x, alpha)
    return CotangentState(x, alpha / math.sqrt(2.0 * level))


@criterion("flat_curvature", "Euclidean fixture has vanishing curvature", 1.0)
def _flat_curvature() -> List[Measurement]:
    H = builtin("euclidean")
    report = curvature_report(H, CotangentState([0.3, -0.2], [1.0, 0.5]))
    return [
        Measurement("norm_R", float(np.linalg.norm(report.R)), 1e-7),
        Measurement("abs_ric", abs(report.ric), 1e-7),
    ]


@criterion("mechanical_curvature", "R = Hess Z by the frame and coordinate routes", 5.0)
def _mechanical_curvature() -> List[Measurement]:
    H = builtin("mechanical", {"potential": "x0**2/2"})
    state = CotangentState([0.5, 0.2], [1.0, 0.3])
    expected = np.diag([1.0, 0.0])
    frame = curvature_report(H, state).R
    coordinate = curvature_coordinate_formula(H, state).R
    return [
        Measurement("frame_route_error", float(np.linalg.norm(frame - expected)), 1e-5),
        Measurement("coordinate_route_error", float(np.linalg.norm(coordinate - expected)), 1e-5),
        Measurement("route_gap", float(np.linalg.norm(frame - coordinate)), 1e-5),
    ]


@criterion("constant_curvature", "Unit covectors on the round sphere and the hyperbolic plane", 10.0)
def _constant_curvature() -> List[Measurement]:
    sphere = builtin("sphere", {"chart": "stereographic"})
    hyperbolic = builtin("hyperbolic")
    ric_sphere = curvature_report(sphere, _unit(sphere, [0.3, 0.2], [0.4, 1.0])).ric
    ric_hyperbolic = curvature_report(hyperbolic, _unit(hyperbolic, [0.0, 1.5], [1.0, 0.2])).ric
    return [
        Measurement("sphere_ric_error", abs(ric_sphere - 1.0), 1e-4),
        Measurement("hyperbolic_ric_error", abs(ric_hyperbolic + 1.0), 1e-4),
    ]


@criterion("deformation_scaling", "Ric of h(F*) equals (h'(F*)/F*)^2 Ric of F", 20.0)
def _deformation_scaling() -> List[Measurement]:
    fixtures = {
        "sphere": (builtin("sphere"), CotangentState([0.3, 0.2], [0.6, 0.9])),
        "hyperbolic": (builtin("hyperbolic"), CotangentState([0.0, 1.5], [0.8, 0.3])),
    }
    measurements = []
    for label, (base, state) in fixtures.items():
        for profile in ("t**2/2", "(2*t)**2/2", "t**3/3"):
            check = fconv_scaling_check(base, profile, state)
            measurements.append(Measurement(f"{label}[{profile}]", check.relative_defect, 1e-4))
    return measurements


@criterion("frame_lemmas", "Symplecticity, gauge uniqueness, symmetry and time shifts", 20.0)
def _frame_lemmas() -> List[Measurement]:
    H = builtin("mechanical", {"potential": "x0**2/2"})
    state = CotangentState([0.5, 0.2], [1.0, 0.3])
    trajectory = variational_flow(H, state, 1.0)
    bundle = canonical_frame(H, trajectory)
    return [
        Measurement("symplectic_defect", trajectory.symplectic_defect(), 1e-8),
        Measurement("gauge_uniqueness_drift", gauge_uniqueness_drift(H, state, 1.0), 1e-7),
        Measurement("lagrangian_defect", bundle.defects["lagrangian"], 1e-8),
        Measurement("symmetry_defect", curvature_report(H, state).symmetry_defect, 1e-6),
        Measurement("time_shift_defect", time_shift_defect(H, state, 0.25), 1e-5),
    ]


# Riccati, Bochner, comparison


@criterion("riccati", "Matrix and weighted trace Riccati residuals", 20.0)
def _riccati() -> List[Measurement]:
    fixtures = {
        "euclidean": (builtin("euclidean"), "(x0**2 + x1**2)/2"),
        "mechanical": (builtin("mechanical", {"potential": "x0**2/2"}), "x0 + x1/2"),
        "p3": (builtin("p_homogeneous", {"p": 3}), "(x0**2 + x1**2)/2"),
    }
    measurements = []
    for label, (H, expr) in fixtures.items():
        residual = riccati_residual(H, WeightField.lebesgue(H.n), scalar_field(expr, H), [0.5, 0.2], 0.5)
        measurements.append(Measurement(f"{label}_matrix", residual.matrix, 1e-4))
        measurements.append(Measurement(f"{label}_trace", residual.trace, 1e-4))
    return measurements


@criterion("bochner", "Bochner-Weitzenbock identity and its dimensional inequality", 10.0)
def _bochner() -> List[Measurement]:
    euclidean = builtin("euclidean")
    anisotropic = builtin("anisotropic", {"cometric": [[2.0, 0.5], [0.5, 1.0]]})
    fixtures = {
        "euclidean": (euclidean, WeightField.lebesgue(2), "x0**2 + x0*x1 + 2*x1**2"),
        "gaussian": (euclidean, WeightField("(x0**2 + x1**2)/2", 2), "(x0**2 + x1**2)/2"),
        "anisotropic": (anisotropic, WeightField("x0**2/2 + x1**4/12", 2), "x0**2/2 + x0*x1 + x1**3/6"),
    }
    measurements = []
    for label, (H, weight, expr) in fixtures.items():
        report = bochner_residual(H, weight, scalar_field(expr, H), [0.4, 0.3], ("n", "2n", 1e6))
        measurements.append(Measurement(f"{label}_defect", report.defect, 1e-5))
        measurements.append(Measurement(f"{label}_min_nbw_slack", min(report.nbw_slack.values()), -1e-8, ">="))
    return measurements


MODEL_CASES = ((1.0, 2), (0.0, 2), (-1.0, 3))


def _model_oracle(K: float, N: int):
    return lambda t: (K / N) * np.eye(N)


def _comparison_fixtures():
    """(label, report, K, N) for every comparison run."""
    fixtures = []
    for K, N in MODEL_CASES:
        report = laplacian_comparison_check(_model_oracle(K, N), K, N, 2.0, N, samples=200)
        fixtures.append((f"model[K={K:g},N={N}]", report, K, N))
    sphere = builtin("sphere")
    R, psi1, psi2 = curvature_oracle(sphere, _unit(sphere, [0.3, 0.2], [0.4, 1.0]), 1.5)
    report = laplacian_comparison_check(R, 0.5, 2, 1.5, 2, (psi1, psi2), samples=200)
    fixtures.append(("sphere[K=0.5,N=2]", report, 0.5, 2))
    return fixtures


@criterion("comparison", "Laplacian comparison against the (K, N) model", 10.0)
def _comparison() -> List[Measurement]:
    measurements = []
    for label, report, K, N in _comparison_fixtures():
        if label.startswith("model"):
            measurements.append(Measurement(f"{label}_model_gap", float(np.max(np.abs(report.delta - report.bound))), 1e-6))
        else:
            measurements.append(Measurement(f"{label}_violation", report.worst_violation, 1e-5))

    projector = np.diag([0.0, 1.0])
    radial = laplacian_comparison_check(lambda t: np.zeros((2, 2)), 0.0, 2, 2.0, 2, seed_projector=projector, samples=200)
    flat = 1.0 / radial.times
    measurements.append(Measurement("flat_radial_gap", float(np.max(np.abs(radial.delta - flat))), 1e-6))
    measurements.append(Measurement("flat_radial_violation", radial.worst_violation, 0.0))
    return measurements


@criterion("mcp", "Measure contraction ratio and its trace-bound equivalent", 5.0)
def _mcp() -> List[Measurement]:
    measurements = []
    for label, report, K, N in _comparison_fixtures():
        verdict = mcp_ratio_check(report.log_density, K, N, report.times, derivative=report.log_density_derivative)
        measurements.append(Measurement(f"{label}_worst_increase", verdict.worst_increase, 1e-8))
        measurements.append(Measurement(f"{label}_equivalent", float(verdict.equivalent), 1.0, ">="))
    grid = np.linspace(0.1, 3.0, 60)
    flat = mcp_ratio_check(lambda t: math.log(t), 0.0, 1.0, grid)
    measurements.append(Measurement("flat_radial_ratio_drift", abs(flat.worst_increase), 1e-8))
    return measurements


# grid flows


def _sine(amplitude: float = 0.5, shift: float = 0.0):
    return lambda x: 1.0 + amplitude * np.sin(2.0 * np.pi * x + shift)


def _spectral_error(cells: int, T: float = 0.1) -> float:
    H = builtin("euclidean", {"n": 1})
    field0 = GridField.on_torus([cells], 1.0, _sine())
    final = heat_solve_explicit(H, field0, T).final
    (x,) = field0.coords()
    exact = 1.0 + 0.5 * np.exp(-4.0 * np.pi**2 * T) * np.sin(2.0 * np.pi * x)
    return float(np.max(np.abs(final.values - exact)))


@criterion("heat_flow", "Explicit heat flow invariants, oracles and slopes", 60.0)
def _heat_flow() -> List[Measurement]:
    p3 = builtin("p_homogeneous", {"p": 3, "base": {"name": "euclidean", "params": {"n": 1}}})
    field0 = GridField.on_torus([64], 1.0, _sine())
    flow = heat_solve_explicit(p3, field0, 0.02)
    energy_increase = float(np.max(np.diff(flow.diagnostics.energy)))

    quadratic = builtin("euclidean", {"n": 1})
    second = GridField.on_torus([64], 1.0, _sine(0.3, 1.0))
    _, distances = contraction_profile(quadratic, field0, second, 0.02)

    coarse, fine = _spectral_error(128), _spectral_error(256)
    _, order = mms_convergence_order(quadratic, GridField.on_torus([32], 1.0, _sine()), 0.02)
    slope = slope_and_identity_check(p3, field0)
    return [
        Measurement("mass_drift", flow.mass_drift, 1e-12),
        Measurement("energy_increase", energy_increase, 0.0),
        Measurement("distance_increase", float(np.max(np.diff(distances))), 1e-14),
        Measurement("spectral_error", fine, 1e-4),
        Measurement("spectral_order", math.log2(coarse / fine), 1.8, ">="),
        Measurement("mms_order", order, 0.95, ">="),
        Measurement("slope_error", slope.metric_error, 0.02),
    ]


def _density(cells: int = 64):
    field0 = GridField.on_torus([cells], 1.0, _sine())
    return field0.with_values(field0.values / field0.mass())


@criterion("entropy_flow", "Entropy gradient flow against the heat flow", 60.0)
def _entropy_flow() -> List[Measurement]:
    rho0 = _density()
    quadratic = builtin("euclidean", {"n": 1})
    p3 = builtin("p_homogeneous", {"p": 3, "base": {"name": "euclidean", "params": {"n": 1}}})
    measurements = []
    for label, H in (("quadratic", quadratic), ("p3", p3)):
        flow = entropy_flow_solve(H, rho0, 0.02)
        times = flow.diagnostics.times
        heat = heat_solve_explicit(H, rho0, 0.02, dt=float(times[1] - times[0]))
        gap = l2_distance(flow.final, heat.final)
        measurements += [
            Measurement(f"{label}_mass_drift", flow.mass_drift, 1e-12),
            Measurement(f"{label}_entropy_increase", float(np.max(np.diff(flow.diagnostics.entropy))), 0.0),
            Measurement(f"{label}_dissipation_error", dissipation_identity_error(flow), 0.02),
        ]
        if label == "quadratic":
            measurements.append(Measurement("quadratic_heat_gap", gap, 1e-6))
        else:
            measurements.append(Measurement("p3_heat_gap", gap, 1e-3, ">="))
    return measurements


# transport


@criterion("transport", "Monotone transport and the functional inequalities on the line", 30.0)
def _transport() -> List[Measurement]:
    measurements = []
    coarse = uniform_edges(-2.0, 2.0, 10)
    mu = gaussian_profile(-0.5, 0.7, coarse, lebesgue_psi)
    nu = gaussian_profile(0.8, 0.5, coarse, lebesgue_psi)
    for expr in ("v**2/2", "Abs(v)**3/3"):
        L = Lagrangian1D.from_expression(expr)
        gap = abs(discrete_monotone_cost(mu, nu, L) - discrete_optimal_cost(mu, nu, L))
        measurements.append(Measurement(f"discrete_gap[{expr}]", gap, 1e-8))

    edges = uniform_edges()
    quadratic = builtin("euclidean", {"n": 1})
    L = Lagrangian1D.from_expression("v**2/2")
    source = gaussian_profile(1.0, edges=edges)
    m = DensityProfile.reference(edges, gaussian_psi)
    plan = monotone_transport(source, gaussian_profile(0.0, edges=edges), L)
    lhs, rhs, _ = change_of_variables_check(plan, 0.5, lambda r: r**2)
    measurements.append(Measurement("change_of_variables", abs(lhs - rhs), 1e-8))

    equality = talagrand_hwi_check(quadratic, L, source, m, 1.0, 2.0)
    loose = talagrand_hwi_check(quadratic, L, source, m, 1.0, 1.0)
    measurements += [
        Measurement("talagrand_equality_gap", abs(equality.talagrand_slack), 1e-6),
        Measurement("hwi_equality_gap", abs(equality.hwi_slack), 1e-6),
        Measurement("talagrand_slack", loose.talagrand_slack, 0.0, ">="),
        Measurement("hwi_slack", loose.hwi_slack, 0.0, ">="),
    ]

    flat = monotone_transport(
        gaussian_profile(0.0, 1.0, edges, lebesgue_psi), gaussian_profile(2.0, 0.5, edges, lebesgue_psi), L
    )
    measurements += [
        Measurement("k_convexity_gaussian", k_convexity_check(quadratic, plan, 2.0), 1e-5),
        Measurement("k_convexity_lebesgue", k_convexity_check(quadratic, flat, 0.0), 1e-5),
        Measurement("entropy_derivative_slack", entropy_derivative_check(plan).slack, -1e-6, ">="),
    ]
    return measurements


@criterion("harmonicity", "Dirichlet minimizers are discretely harmonic", 10.0)
def _harmonicity() -> List[Measurement]:
    p3_plane = builtin("p_homogeneous", {"p": 3})
    shape = (12, 12)
    grid = GridField.on_box(shape, [0.0, 0.0], 1.0 / 11, lambda x, y: x**2 - y**2 + 2.0 * x + y)
    mask = boundary_mask(shape)
    start = grid.with_values(np.where(mask, grid.values, float(np.mean(grid.values[mask]))))
    plane = dirichlet_harmonic(p3_plane, start, mask)

    p3_line = builtin("p_homogeneous", {"p": 3, "base": {"name": "euclidean", "params": {"n": 1}}})
    line = GridField.on_box([32], [0.0], 1.0 / 31, lambda x: np.where(x > 0.5, 2.0, -1.0))
    line_mask = boundary_mask((32,))
    solution = dirichlet_harmonic(p3_line, line.with_values(np.where(line_mask, line.values, 0.0)), line_mask)
    affine = np.linspace(solution.values[0], solution.values[-1], 32)
    return [
        Measurement("interior_residual", interior_residual(p3_plane, plane, mask), 1e-8),
        Measurement("affine_error", float(np.max(np.abs(solution.values - affine))), 1e-8),
    ]


# driver


def select_criteria(name_filter: Optional[str] = None) -> List[Criterion]:
    """
    Criteria whose name contains ``name_filter``; all of them without one.

    Raises:
        AcceptanceFilterError: If nothing matches
    """
    if not name_filter:
        return list(CRITERIA.values())
    selected = [c for name, c in CRITERIA.items() if name_filter in name]
    if not selected:
        raise AcceptanceFilterError(name_filter, available_criteria())
    return selected


def run_criterion(check: Criterion, tolerance_scale: float = 1.0) -> CriterionResult:
    result = CriterionResult(check.name)
    started = time.perf_counter()
    try:
        result.measurements = [m.scaled(tolerance_scale) for m in check.fn()]
    except HamflowError as exc:
        logger.error(f"{check.name}: {exc}")
        result.error = f"{type(exc).__name__}: {exc}"
    result.runtime = time.perf_counter() - started
    if result.runtime > check.budget:
        logger.warning(f"{check.name}: took {result.runtime:.1f}s, over its {check.budget:.0f}s budget")
    status = "passed" if result.passed else "FAILED"
    logger.info(f"{check.name}: {status} in {result.runtime:.2f}s")
    return result


def run_acceptance(
    name_filter: Optional[str] = None, threads: int = 1, tolerance_scale: float = 1.0
) -> List[CriterionResult]:
    """
    Run the selected criteria.

    Raises:
        AcceptanceFilterError: If the filter matches no criterion
    """
    selected = select_criteria(name_filter)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [pool.submit(run_criterion, c, tolerance_scale) for c in selected]
        return [f.result() for f in tqdm(futures, desc="acceptance", unit="criterion", disable=len(futures) < 2)]
