"""Per-kind experiment runners and their CSV, plot-data and snapshot artifacts."""

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .comparison import (
    ComparisonReport,
    bochner_residual,
    curvature_oracle,
    hj_transport,
    laplacian_comparison_check,
    mcp_ratio_check,
    riccati_residual,
    s_KN,
)
from .config import BatchConfig, ComparisonConfig, ExperimentConfig, ExperimentKind, OracleKind, ReferenceKind
from .errors import ConfigError, CoordinateFormulaError, HamflowError
from .frames import curvature_coordinate_formula, curvature_report
from .hamiltonians import ChartHamiltonian, CotangentState, WeightField, builtin, phase_symbols
from .heatgrid import (
    DIAGNOSTIC_COLUMNS,
    ENTROPY_FLOW_COLUMNS,
    GridField,
    contraction_profile,
    dissipation_identity_error,
    dirichlet_harmonic,
    entropy_flow_solve,
    heat_solve_explicit,
    interior_residual,
    l2_distance,
    mms_convergence_order,
    write_snapshot,
)
from .jets import ScalarField
from .laplacian import scalar_field
from .transport1d import (
    DensityProfile,
    Lagrangian1D,
    entropy_derivative_check,
    gaussian_profile,
    gaussian_psi,
    k_convexity_check,
    lebesgue_psi,
    monotone_transport,
    talagrand_hwi_check,
    transport_costs,
    uniform_edges,
)

logger = logging.getLogger(__name__)

MAX_CSV_ROWS = 2001


@dataclass
class ExperimentResult:
    name: str
    kind: ExperimentKind
    metrics: Dict[str, float] = field(default_factory=dict)
    artifacts: List[Path] = field(default_factory=list)
    runtime: float = 0.0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


# writers


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".15g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    """Write rows under a header naming each column's quantity."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])
    logger.debug(f"wrote {len(rows)} rows to {path}")
    return path


def write_plot_data(path: Path, x: Sequence[float], y: Sequence[float], labels: Tuple[str, str]) -> Path:
    """Two whitespace-separated columns with a commented header line."""
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {labels[0]} {labels[1]}"]
    lines += [f"{_cell(float(a))} {_cell(float(b))}" for a, b in zip(x, y)]
    path.write_text("\n".join(lines) + "\n")
    return path


def _thin(rows: List[Sequence[Any]]) -> List[Sequence[Any]]:
    if len(rows) <= MAX_CSV_ROWS:
        return rows
    stride = math.ceil(len(rows) / (MAX_CSV_ROWS - 1))
    thinned = rows[::stride]
    if thinned[-1] is not rows[-1]:
        thinned.append(rows[-1])
    return thinned


# builders


def build_hamiltonian(config: ExperimentConfig) -> ChartHamiltonian:
    return builtin(config.hamiltonian.name, dict(config.hamiltonian.params))


def build_weight(config: ExperimentConfig, n: int) -> WeightField:
    return WeightField(config.weight, n)


def build_state(config: ExperimentConfig, H: ChartHamiltonian) -> CotangentState:
    trajectory = config.trajectory
    if len(trajectory.x) != H.n:
        raise ConfigError([f"trajectory.x: expected {H.n} coordinates for {H.name}, got {len(trajectory.x)}"])
    return CotangentState(trajectory.x, trajectory.alpha)


def _grid_values(expr: str, dim: int) -> Callable[..., np.ndarray]:
    values = ScalarField.from_string(expr, phase_symbols(dim)[0])
    return lambda *coords: values.value_on(*coords)


def _torus(config: ExperimentConfig, H: ChartHamiltonian, expr: str) -> GridField:
    grid = config.grid
    if len(grid.shape) != H.n:
        raise ConfigError([f"grid.shape: {len(grid.shape)} axes for a Hamiltonian with n={H.n}"])
    return GridField.on_torus(grid.shape, grid.length, _grid_values(expr, H.n), build_weight(config, H.n))


# runners


def _run_curvature(config: ExperimentConfig, out: Path) -> ExperimentResult:
    H = build_hamiltonian(config)
    state = build_state(config, H)
    weight = build_weight(config, H.n)
    N = config.trajectory.N
    reports = [curvature_report(H, state, weight, N, config.trajectory.steps_per_unit)]
    try:
        reports.append(curvature_coordinate_formula(H, state))
    except CoordinateFormulaError as exc:
        logger.warning(f"{config.name}: skipping coordinate route: {exc}")

    n = H.n
    header = ["route", "ric", "ric_N"] + [f"R_{i}{j}" for i in range(n) for j in range(n)]
    rows = [
        [report.route.value, report.ric, report.ric_N if report.ric_N is not None else math.nan, *report.R.ravel()]
        for report in reports
    ]
    result = ExperimentResult(config.name, config.experiment)
    result.artifacts.append(write_csv(out / "curvature.csv", header, rows))
    result.metrics["ric"] = reports[0].ric
    result.metrics["symmetry_defect"] = reports[0].symmetry_defect
    if len(reports) > 1:
        result.metrics["route_gap"] = float(np.linalg.norm(reports[0].R - reports[1].R))
    return result


def _run_riccati(config: ExperimentConfig, out: Path) -> ExperimentResult:
    H = build_hamiltonian(config)
    weight = build_weight(config, H.n)
    u = scalar_field(config.trajectory.function, H)
    trajectory = config.trajectory
    transport = hj_transport(H, u, trajectory.x, trajectory.T, weight, trajectory.steps_per_unit)
    residual = riccati_residual(
        H, weight, u, trajectory.x, trajectory.T, trajectory.steps_per_unit, transport=transport
    )
    rows = [[s.t, float(np.trace(s.hess)), s.trace_lap] for s in transport.states]
    result = ExperimentResult(config.name, config.experiment)
    result.artifacts.append(write_csv(out / "riccati.csv", ["t", "hess_trace", "delta_m"], _thin(rows)))
    result.artifacts.append(
        write_csv(
            out / "residuals.csv",
            ["matrix_residual", "trace_residual", "riccati_gap"],
            [[residual.matrix, residual.trace, residual.riccati_gap]],
        )
    )
    result.metrics.update(
        matrix_residual=residual.matrix, trace_residual=residual.trace, riccati_gap=residual.riccati_gap
    )
    return result


def _run_bochner(config: ExperimentConfig, out: Path) -> ExperimentResult:
    H = build_hamiltonian(config)
    weight = build_weight(config, H.n)
    u = scalar_field(config.trajectory.function, H)
    report = bochner_residual(H, weight, u, config.trajectory.x)
    result = ExperimentResult(config.name, config.experiment)
    result.artifacts.append(
        write_csv(
            out / "bochner.csv",
            ["lhs", "rhs", "bochner_defect", "laplacian"],
            [[report.lhs, report.rhs, report.defect, report.laplacian]],
        )
    )
    result.artifacts.append(
        write_csv(out / "nbw.csv", ["N", "nbw_slack"], [[N, slack] for N, slack in report.nbw_slack.items()])
    )
    result.metrics["bochner_defect"] = report.defect
    result.metrics["min_nbw_slack"] = min(report.nbw_slack.values())
    return result


def _comparison(config: ExperimentConfig) -> Tuple[ComparisonReport, ComparisonConfig]:
    settings = config.comparison
    if settings.oracle == OracleKind.MODEL:
        n = settings.n
        level = settings.K / settings.N

        def R_oracle(t: float) -> np.ndarray:
            return level * np.eye(n)

        derivs = None
    else:
        H = build_hamiltonian(config)
        n = H.n
        weight = build_weight(config, n)
        R_oracle, psi1, psi2 = curvature_oracle(
            H, build_state(config, H), settings.T, weight, config.trajectory.steps_per_unit
        )
        derivs = (psi1, psi2)
    report = laplacian_comparison_check(
        R_oracle, settings.K, settings.N, settings.T, n, derivs, settings.t0, samples=settings.samples
    )
    return report, settings


def _run_compare(config: ExperimentConfig, out: Path) -> ExperimentResult:
    report, _ = _comparison(config)
    rows = [[t, d, b, d - b] for t, d, b in zip(report.times, report.delta, report.bound)]
    result = ExperimentResult(config.name, config.experiment)
    result.artifacts.append(write_csv(out / "compare.csv", ["t", "delta_m", "s_KN_bound", "violation"], rows))
    result.artifacts.append(write_plot_data(out / "delta_m.dat", report.times, report.delta, ("t", "delta_m")))
    result.artifacts.append(write_plot_data(out / "s_KN_bound.dat", report.times, report.bound, ("t", "s_KN_bound")))
    result.metrics.update(
        worst_violation=report.worst_violation,
        focal_time=report.focal_time if report.focal_time is not None else math.nan,
        refinement_gap=report.refinement_gap,
        min_ric_N=report.min_ric_N,
    )
    if report.sharper_candidate_gap is not None:
        result.metrics["sharper_candidate_gap"] = report.sharper_candidate_gap
    return result


def _run_mcp(config: ExperimentConfig, out: Path) -> ExperimentResult:
    report, settings = _comparison(config)
    verdict = mcp_ratio_check(
        report.log_density, settings.K, settings.N, report.times, derivative=report.log_density_derivative
    )
    rows = []
    for t in report.times:
        ell = report.log_density(t)
        rows.append([t, ell, ell - settings.N * math.log(s_KN(settings.K, settings.N, t))])
    result = ExperimentResult(config.name, config.experiment)
    result.artifacts.append(write_csv(out / "mcp.csv", ["t", "log_density", "log_ratio"], rows))
    result.metrics.update(
        worst_increase=verdict.worst_increase,
        worst_trace_excess=verdict.worst_trace_excess,
        non_increasing=float(verdict.non_increasing),
        equivalent=float(verdict.equivalent),
    )
    return result


def _run_heat(config: ExperimentConfig, out: Path) -> ExperimentResult:
    H = build_hamiltonian(config)
    field0 = _torus(config, H, config.grid.initial)
    flow = heat_solve_explicit(H, field0, config.grid.T, config.grid.dt, snapshot_every=config.grid.snapshot_every)
    diagnostics = flow.diagnostics
    result = ExperimentResult(config.name, config.experiment)
    result.artifacts.append(write_csv(out / "heat.csv", DIAGNOSTIC_COLUMNS, _thin(diagnostics.rows())))
    result.artifacts.append(write_plot_data(out / "energy.dat", diagnostics.times, diagnostics.energy, ("t", "energy")))
    for k, (snapshot, t) in enumerate(zip(flow.snapshots, flow.snapshot_times)):
        path = out / "snapshots" / f"u_{k:04d}.bin"
        write_snapshot(snapshot, path)
        result.artifacts.append(path)
    result.metrics.update(
        mass_drift=flow.mass_drift,
        energy_increase=float(np.max(np.diff(diagnostics.energy), initial=0.0)),
        final_energy=float(diagnostics.energy[-1]),
    )
    if config.grid.second_initial:
        second = _torus(config, H, config.grid.second_initial)
        times, distances = contraction_profile(H, field0, second, config.grid.T, config.grid.dt)
        rows = _thin([[t, d] for t, d in zip(times, distances)])
        result.artifacts.append(write_csv(out / "contraction.csv", ["t", "l2_distance"], rows))
        result.metrics["distance_increase"] = float(np.max(np.diff(distances), initial=0.0))
    return result


def _run_mms(config: ExperimentConfig, out: Path) -> ExperimentResult:
    H = build_hamiltonian(config)
    field0 = _torus(config, H, config.grid.initial)
    gaps, order = mms_convergence_order(H, field0, config.grid.T, config.grid.mms_steps)
    result = ExperimentResult(config.name, config.experiment)
    result.artifacts.append(write_csv(out / "mms.csv", ["k", "l2_gap"], list(zip(config.grid.mms_steps, gaps))))
    result.metrics["observed_order"] = order
    return result


def _run_entropyflow(config: ExperimentConfig, out: Path) -> ExperimentResult:
    H = build_hamiltonian(config)
    field0 = _torus(config, H, config.grid.initial)
    rho0 = field0.with_values(field0.values / field0.mass())
    flow = entropy_flow_solve(H, rho0, config.grid.T, config.grid.dt)
    diagnostics = flow.diagnostics
    dt = float(diagnostics.times[1] - diagnostics.times[0])
    heat = heat_solve_explicit(H, rho0, config.grid.T, dt)

    rows = [list(row) + [d] for row, d in zip(diagnostics.rows(), flow.dissipation)]
    result = ExperimentResult(config.name, config.experiment)
    result.artifacts.append(write_csv(out / "entropyflow.csv", ENTROPY_FLOW_COLUMNS, _thin(rows)))
    result.artifacts.append(write_plot_data(out / "entropy.dat", diagnostics.times, diagnostics.entropy, ("t", "entropy")))
    path = out / "snapshots" / "rho_final.bin"
    write_snapshot(flow.final, path)
    result.artifacts.append(path)
    result.metrics.update(
        mass_drift=flow.mass_drift,
        entropy_increase=float(np.max(np.diff(diagnostics.entropy), initial=0.0)),
        dissipation_error=dissipation_identity_error(flow),
        heat_gap=l2_distance(flow.final, heat.final),
    )
    return result


def boundary_mask(shape: Sequence[int]) -> np.ndarray:
    """The outer ring of cells of a box grid."""
    mask = np.zeros(shape, dtype=bool)
    for axis in range(len(shape)):
        index = [slice(None)] * len(shape)
        index[axis] = 0
        mask[tuple(index)] = True
        index[axis] = -1
        mask[tuple(index)] = True
    return mask


def _run_harmonic(config: ExperimentConfig, out: Path) -> ExperimentResult:
    H = build_hamiltonian(config)
    grid = config.grid
    if len(grid.shape) != H.n:
        raise ConfigError([f"grid.shape: {len(grid.shape)} axes for a Hamiltonian with n={H.n}"])
    spacing = grid.length / (grid.shape[0] - 1)
    field0 = GridField.on_box(grid.shape, [0.0] * H.n, spacing, _grid_values(grid.initial, H.n), build_weight(config, H.n))
    mask = boundary_mask(grid.shape)
    start = np.where(mask, field0.values, float(np.mean(field0.values[mask])))
    solution = dirichlet_harmonic(H, field0.with_values(start), mask)
    residual = interior_residual(H, solution, mask)

    header = [f"x{a}" for a in range(H.n)] + ["u"]
    rows = np.column_stack([c.ravel() for c in solution.coords()] + [solution.values.ravel()]).tolist()
    result = ExperimentResult(config.name, config.experiment)
    result.artifacts.append(write_csv(out / "harmonic.csv", header, rows))
    result.metrics["interior_residual"] = residual
    if H.n == 1:
        values = solution.values
        line = np.linspace(values[0], values[-1], len(values))
        result.metrics["affine_error"] = float(np.max(np.abs(values - line)))
    return result


def _run_transport(config: ExperimentConfig, out: Path) -> ExperimentResult:
    settings = config.transport
    H = build_hamiltonian(config)
    if H.n != 1:
        raise ConfigError([f"hamiltonian: transport runs on the line, got n={H.n}"])
    L = Lagrangian1D.from_expression(settings.lagrangian) if settings.lagrangian else Lagrangian1D.from_hamiltonian(H)
    psi = gaussian_psi if settings.reference == ReferenceKind.GAUSSIAN else lebesgue_psi
    edges = uniform_edges(settings.lower, settings.upper, settings.cells)
    mu = gaussian_profile(settings.source_mean, edges=edges, psi=psi, quartic=settings.quartic)
    nu = gaussian_profile(settings.target_mean, edges=edges, psi=psi)
    plan = monotone_transport(mu, nu, L, settings.horizon)
    cost_L, cost_H = transport_costs(H, L, plan)
    defect = k_convexity_check(H, plan, settings.K)
    derivative = entropy_derivative_check(plan)
    independent = plan.independent_cost()

    fixture = config.name
    rows = [
        [fixture, "monotone_vs_independent", plan.cost, independent, independent - plan.cost],
        [fixture, "k_convexity", defect, 0.0, -defect],
        [fixture, "entropy_derivative", derivative.rhs, derivative.lhs, derivative.slack],
    ]
    result = ExperimentResult(config.name, config.experiment)
    if settings.reference == ReferenceKind.GAUSSIAN:
        m = DensityProfile.reference(edges, psi)
        inequalities = talagrand_hwi_check(H, L, mu, m, settings.horizon, settings.K)
        rows += [[fixture, *row] for row in inequalities.rows()]
        result.metrics["talagrand_slack"] = inequalities.talagrand_slack
        result.metrics["hwi_slack"] = inequalities.hwi_slack
    result.artifacts.append(write_csv(out / "transport.csv", ["fixture", "inequality", "lhs", "rhs", "slack"], rows))
    result.artifacts.append(write_csv(out / "costs.csv", ["C_L", "C_H"], [[cost_L, cost_H]]))
    result.metrics.update(cost_L=cost_L, cost_H=cost_H, k_convexity_defect=defect, dent_slack=derivative.slack)
    return result


RUNNERS: Dict[ExperimentKind, Callable[[ExperimentConfig, Path], ExperimentResult]] = {
    ExperimentKind.CURVATURE: _run_curvature,
    ExperimentKind.RICCATI: _run_riccati,
    ExperimentKind.BOCHNER: _run_bochner,
    ExperimentKind.COMPARE: _run_compare,
    ExperimentKind.MCP: _run_mcp,
    ExperimentKind.HEAT: _run_heat,
    ExperimentKind.MMS: _run_mms,
    ExperimentKind.ENTROPYFLOW: _run_entropyflow,
    ExperimentKind.HARMONIC: _run_harmonic,
    ExperimentKind.TRANSPORT: _run_transport,
}


# metrics held to an experiment's tolerance: defects must stay below it, slacks above its negative
JUDGED_DEFECTS: Dict[ExperimentKind, Tuple[str, ...]] = {
    ExperimentKind.CURVATURE: ("symmetry_defect", "route_gap"),
    ExperimentKind.RICCATI: ("matrix_residual", "trace_residual"),
    ExperimentKind.BOCHNER: ("bochner_defect",),
    ExperimentKind.COMPARE: ("worst_violation",),
    ExperimentKind.MCP: ("worst_increase",),
    ExperimentKind.HEAT: ("mass_drift", "energy_increase", "distance_increase"),
    ExperimentKind.ENTROPYFLOW: ("mass_drift", "entropy_increase"),
    ExperimentKind.HARMONIC: ("interior_residual", "affine_error"),
    ExperimentKind.TRANSPORT: ("k_convexity_defect",),
}
JUDGED_SLACKS: Dict[ExperimentKind, Tuple[str, ...]] = {
    ExperimentKind.BOCHNER: ("min_nbw_slack",),
    ExperimentKind.TRANSPORT: ("dent_slack", "talagrand_slack", "hwi_slack"),
}


def judge_metrics(result: ExperimentResult, tolerance: float) -> Optional[str]:
    """
    Compare a result's judged metrics against ``tolerance``.

    Missing metrics are skipped; a NaN always fails.

    Returns:
        A "tolerance exceeded" message naming every failing metric, or None
    """
    failures = []
    for name in JUDGED_DEFECTS.get(result.kind, ()):
        value = result.metrics.get(name)
        if value is not None and not value <= tolerance:
            failures.append(f"{name} = {value:.3e} > {tolerance:.3e}")
    for name in JUDGED_SLACKS.get(result.kind, ()):
        value = result.metrics.get(name)
        if value is not None and not value >= -tolerance:
            failures.append(f"{name} = {value:.3e} < {-tolerance:.3e}")
    if not failures:
        return None
    return "tolerance exceeded: " + "; ".join(failures)


def run_experiment(config: ExperimentConfig, out_root: Path, tolerance_scale: float = 1.0) -> ExperimentResult:
    """
    Run one experiment into out_root/<name>/.

    A run that finishes is then judged against ``config.tolerance`` times ``tolerance_scale``.

    Returns:
        The result; on a HamflowError or an exceeded tolerance it carries the message instead of raising
    """
    out = Path(out_root) / config.name
    out.mkdir(parents=True, exist_ok=True)
    np.random.seed(config.seed)
    started = time.perf_counter()
    try:
        result = RUNNERS[config.experiment](config, out)
    except ConfigError:
        raise
    except HamflowError as exc:
        logger.error(f"{config.name}: {exc}")
        result = ExperimentResult(config.name, config.experiment, error=str(exc))
    if result.ok:
        result.error = judge_metrics(result, config.tolerance * tolerance_scale)
        if result.error:
            logger.error(f"{config.name}: {result.error}")
    result.runtime = time.perf_counter() - started

    summary = {"name": result.name, "experiment": result.kind.value, "metrics": result.metrics, "error": result.error}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=float))
    logger.info(f"{config.name}: {config.experiment.value} finished with {len(result.artifacts)} artifact(s)")
    return result


def run_batch(
    batch: BatchConfig, out_root: Path, threads: int = 1, tolerance_scale: float = 1.0
) -> List[ExperimentResult]:
    """Run every experiment of a batch, in parallel when ``threads`` > 1."""
    experiments = batch.experiments
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [pool.submit(run_experiment, config, out_root, tolerance_scale) for config in experiments]
        return [future.result() for future in tqdm(futures, desc="experiments", unit="exp", disable=len(futures) < 2)]
