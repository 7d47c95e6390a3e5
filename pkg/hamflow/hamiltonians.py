"""Chart Hamiltonians, the Legendre transform and the built-in fixtures."""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import sympy as sp

from .errors import DeformationError, HamiltonianError, LegendreError
from .jets import Jet3, ScalarField, jet_eval

logger = logging.getLogger(__name__)

LEGENDRE_TOL = 1e-12
LEGENDRE_MAX_ITER = 100
ARMIJO_C = 1e-4
# Sampling window used by the invariant sampler on unbounded charts
SAMPLE_WINDOW = 2.0
PROFILE_SAMPLES = (0.1, 0.5, 1.0, 2.0, 5.0)

PROFILE_VARIABLE = sp.Symbol("t", positive=True)


def phase_symbols(n: int) -> Tuple[Tuple[sp.Symbol, ...], Tuple[sp.Symbol, ...]]:
    """Return the position symbols x0.. and covector symbols a0.. for dimension n."""
    if n < 1:
        raise ValueError(f"Dimension must be positive, got {n}")
    return tuple(sp.symbols(f"x0:{n}")), tuple(sp.symbols(f"a0:{n}"))


@dataclass(frozen=True)
class Chart:
    """A coordinate box or a flat torus."""

    kind: str
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("box", "torus"):
            raise ValueError(f"Unknown chart kind: {self.kind}")
        if len(self.lower) != len(self.upper):
            raise ValueError("Chart bounds have different lengths")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError(f"Empty chart: {self.lower} .. {self.upper}")

    @classmethod
    def box(cls, n: int, half_width: float = 50.0) -> "Chart":
        return cls("box", (-half_width,) * n, (half_width,) * n)

    @classmethod
    def torus(cls, periods: Sequence[float]) -> "Chart":
        return cls("torus", (0.0,) * len(periods), tuple(float(p) for p in periods))

    @property
    def periods(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def contains(self, x: Sequence[float]) -> bool:
        if self.kind == "torus":
            return True
        x = np.asarray(x)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform points from the inner part of the chart."""
        lower = np.maximum(self.lower, -SAMPLE_WINDOW)
        upper = np.minimum(self.upper, SAMPLE_WINDOW)
        lower, upper = lower + 0.1 * (upper - lower), upper - 0.1 * (upper - lower)
        return rng.uniform(lower, upper, size=(count, len(self.lower)))


@dataclass(frozen=True)
class CotangentState:
    """A covector alpha at the point x."""

    x: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        alpha = np.array(self.alpha, dtype=float).reshape(-1)
        if x.shape != alpha.shape:
            raise ValueError(f"x and alpha differ in length: {x.shape} vs {alpha.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(alpha))):
            raise ValueError("Cotangent state must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def from_z(cls, z: Sequence[float]) -> "CotangentState":
        z = np.asarray(z, dtype=float)
        n = len(z) // 2
        return cls(z[:n], z[n:])

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x, self.alpha])

    @property
    def on_zero_section(self) -> bool:
        return not np.any(self.alpha)


class ChartHamiltonian:
    """A fiberwise strongly convex Hamiltonian H(x, alpha) on one chart of T*M.

    Variables are ordered z = (x0..x{n-1}, a0..a{n-1}); every derivative
    tensor uses that order.
    """

    def __init__(
        self,
        name: str,
        n: int,
        expr: Any,
        chart: Optional[Chart] = None,
        params: Optional[Dict[str, Any]] = None,
    ):
        self.name = name
        self.n = n
        self.x_symbols, self.alpha_symbols = phase_symbols(n)
        self.field = ScalarField(expr, self.x_symbols + self.alpha_symbols)
        self.chart = chart or Chart.box(n)
        if len(self.chart.lower) != n:
            raise ValueError(f"Chart dimension {len(self.chart.lower)} does not match n={n}")
        self.params = dict(params or {})

    def __repr__(self) -> str:
        return f"ChartHamiltonian({self.name!r}, n={self.n}, H={self.expr})"

    @property
    def expr(self) -> sp.Expr:
        return self.field.expr

    @cached_property
    def depends_on_position(self) -> bool:
        return bool(self.expr.free_symbols & set(self.x_symbols))

    @cached_property
    def normalized(self) -> bool:
        """True when H vanishes identically on the zero section."""
        on_zero = self.expr.subs({a: 0 for a in self.alpha_symbols})
        return sp.simplify(on_zero) == 0

    @cached_property
    def zero_section_smooth(self) -> bool:
        """True when H_alpha_alpha is finite and positive-definite at alpha = 0."""
        x = self.chart.sample(np.random.default_rng(0), 1)[0]
        with np.errstate(all="ignore"):
            try:
                hess = self.fiber_hessian(x, np.zeros(self.n))
            except (ZeroDivisionError, ValueError, OverflowError):
                return False
        if not np.all(np.isfinite(hess)):
            return False
        return bool(np.all(np.linalg.eigvalsh(0.5 * (hess + hess.T)) > 0))

    # pointwise evaluation in z = (x, alpha)

    def value_z(self, z: np.ndarray) -> float:
        return self.field.value(z)

    def gradient_z(self, z: np.ndarray) -> np.ndarray:
        return self.field.gradient(z)

    def hessian_z(self, z: np.ndarray) -> np.ndarray:
        return self.field.hessian(z)

    def third_z(self, z: np.ndarray) -> np.ndarray:
        return self.field.third(z)

    def value(self, x: Sequence[float], alpha: Sequence[float]) -> float:
        return self.field.value(np.concatenate([x, alpha]))

    def momentum_gradient(self, x: Sequence[float], alpha: Sequence[float]) -> np.ndarray:
        """H_alpha(x, alpha)."""
        return self.field.gradient(np.concatenate([x, alpha]))[self.n :]

    def position_gradient(self, x: Sequence[float], alpha: Sequence[float]) -> np.ndarray:
        """H_x(x, alpha)."""
        return self.field.gradient(np.concatenate([x, alpha]))[: self.n]

    def fiber_hessian(self, x: Sequence[float], alpha: Sequence[float]) -> np.ndarray:
        """H_alpha_alpha(x, alpha)."""
        n = self.n
        return self.field.hessian(np.concatenate([x, alpha]))[n:, n:]

    def jet(self, state: CotangentState, order: int = 3) -> Jet3:
        return jet_eval(self.field, state.z, order)

    def vector_field(self, z: np.ndarray) -> np.ndarray:
        """Hamiltonian vector field (H_alpha, -H_x)."""
        g = self.field.gradient(z)
        return np.concatenate([g[self.n :], -g[: self.n]])

    def vector_field_jacobian(self, z: np.ndarray) -> np.ndarray:
        """DX_H = [[H_alpha_x, H_alpha_alpha], [-H_x_x, -H_x_alpha]]."""
        n = self.n
        h = self.field.hessian(z)
        return np.block([[h[n:, :n], h[n:, n:]], [-h[:n, :n], -h[:n, n:]]])

    # grid evaluation

    def value_on(self, xs: Sequence[np.ndarray], alphas: Sequence[np.ndarray]) -> np.ndarray:
        return self.field.value_on(*xs, *alphas)

    def momentum_gradient_on(
        self, xs: Sequence[np.ndarray], alphas: Sequence[np.ndarray]
    ) -> np.ndarray:
        """H_alpha on arrays, component axis first."""
        return self.field.gradient_on(*xs, *alphas)[self.n :]

    def fiber_hessian_on(
        self, xs: Sequence[np.ndarray], alphas: Sequence[np.ndarray]
    ) -> np.ndarray:
        n = self.n
        return self.field.hessian_on(*xs, *alphas)[n:, n:]


class WeightField:
    """The weight varsigma of a reference measure m = exp(-varsigma) dx."""

    def __init__(self, expr: Any = 0, n: int = 1):
        self.n = n
        x_symbols, _ = phase_symbols(n)
        if isinstance(expr, str):
            self.field = ScalarField.from_string(expr, x_symbols)
        else:
            self.field = ScalarField(expr, x_symbols)

    @classmethod
    def lebesgue(cls, n: int) -> "WeightField":
        return cls(0, n)

    def __repr__(self) -> str:
        return f"WeightField({self.field.expr})"

    @property
    def expr(self) -> sp.Expr:
        return self.field.expr

    @property
    def is_constant(self) -> bool:
        return not self.field.expr.free_symbols

    def value(self, x: Sequence[float]) -> float:
        return self.field.value(x)

    def gradient(self, x: Sequence[float]) -> np.ndarray:
        return self.field.gradient(x)

    def hessian(self, x: Sequence[float]) -> np.ndarray:
        return self.field.hessian(x)

    def value_on(self, *coords: np.ndarray) -> np.ndarray:
        return self.field.value_on(*coords)


# Legendre transform


def legendre_dual(H: ChartHamiltonian, state: CotangentState) -> np.ndarray:
    """The vector v = H_alpha(x, alpha) dual to the covector alpha."""
    if state.on_zero_section and not H.zero_section_smooth:
        return np.zeros(H.n)
    return H.momentum_gradient(state.x, state.alpha)


class LegendreInverse(NamedTuple):
    alpha: np.ndarray
    degenerate: bool
    iterations: int


def legendre_inverse(
    H: ChartHamiltonian,
    x: Sequence[float],
    v: Sequence[float],
    tol: float = LEGENDRE_TOL,
    max_iter: int = LEGENDRE_MAX_ITER,
) -> LegendreInverse:
    """
    Solve H_alpha(x, alpha) = v by damped Newton on alpha -> H(x, alpha) - alpha.v.

    Args:
        H: Hamiltonian
        x: Base point
        v: Target vector
        tol: Residual tolerance, relative to 1 + |v|
        max_iter: Newton iteration cap

    Returns:
        LegendreInverse with the covector and a degeneracy flag for v = 0

    Raises:
        LegendreError: If Newton does not converge
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        if not H.zero_section_smooth:
            return LegendreInverse(np.zeros(H.n), True, 0)

    def objective(alpha: np.ndarray) -> float:
        return H.value(x, alpha) - float(alpha @ v)

    threshold = tol * (1.0 + np.linalg.norm(v))
    alpha = v.copy()
    for iteration in range(max_iter):
        grad = H.momentum_gradient(x, alpha) - v
        if not np.all(np.isfinite(grad)):
            break
        if np.linalg.norm(grad) <= threshold:
            return LegendreInverse(alpha, False, iteration)

        with np.errstate(all="ignore"):
            hess = H.fiber_hessian(x, alpha)
        try:
            step = -np.linalg.solve(hess, grad)
            if not np.all(np.isfinite(step)) or step @ grad >= 0:
                raise np.linalg.LinAlgError("not a descent direction")
        except np.linalg.LinAlgError:
            step = -grad

        current = objective(alpha)
        slope = float(step @ grad)
        t = 1.0
        while t > 1e-12:
            candidate = alpha + t * step
            value = objective(candidate)
            if np.isfinite(value) and value <= current + ARMIJO_C * t * slope:
                break
            t *= 0.5
        alpha = alpha + t * step
        logger.debug(f"legendre_inverse iteration {iteration}: residual {np.linalg.norm(grad):.3e}, step {t}")

    raise LegendreError(
        f"non-coercive or ill-conditioned Hamiltonian {H.name}: "
        f"no covector with H_alpha = {list(v)} after {max_iter} iterations"
    )


def lagrangian(H: ChartHamiltonian, x: Sequence[float], v: Sequence[float]) -> float:
    """L(x, v) = alpha(v) - H(x, alpha) at alpha = tau(v)."""
    inverse = legendre_inverse(H, x, v)
    return float(inverse.alpha @ np.asarray(v, dtype=float)) - H.value(x, inverse.alpha)


def fenchel_young_gap(
    H: ChartHamiltonian, x: Sequence[float], alpha: Sequence[float], v: Sequence[float]
) -> float:
    """H(alpha) + L(v) - alpha(v), nonnegative with equality at v = H_alpha(alpha)."""
    return H.value(x, alpha) + lagrangian(H, x, v) - float(np.dot(alpha, v))


def check_invariants(H: ChartHamiltonian, samples: int = 16, seed: int = 0) -> None:
    """
    Sample the chart and verify the Hamiltonian invariants.

    Checks that the zero section is the fiberwise minimum (with value 0 for
    normalized H), that H exceeds it off the zero section and that
    H_alpha_alpha is positive-definite there.

    Raises:
        HamiltonianError: Listing every failed sample
    """
    rng = np.random.default_rng(seed)
    points = H.chart.sample(rng, samples)
    covectors = rng.normal(size=(samples, H.n))
    errors = []
    for x, alpha in zip(points, covectors):
        base = H.value(x, np.zeros(H.n))
        if H.normalized and abs(base) > 1e-12:
            errors.append(f"H(x, 0) = {base:.3e} at x={x}")
        value = H.value(x, alpha)
        if not np.isfinite(value) or value <= base:
            errors.append(f"H(x, alpha) = {value:.3e} not above H(x, 0) at x={x}, alpha={alpha}")
        with np.errstate(all="ignore"):
            hess = H.fiber_hessian(x, alpha)
        if not np.all(np.isfinite(hess)):
            errors.append(f"H_alpha_alpha not finite at x={x}, alpha={alpha}")
            continue
        smallest = np.linalg.eigvalsh(0.5 * (hess + hess.T))[0]
        if smallest <= 0:
            errors.append(f"H_alpha_alpha has eigenvalue {smallest:.3e} at x={x}, alpha={alpha}")
    if errors:
        message = f"Hamiltonian {H.name} fails its invariants:\n"
        message += "\n".join(f"  - {error}" for error in errors)
        raise HamiltonianError(message)


# Built-in fixtures


def _symbols_locals(n: int) -> Dict[str, sp.Symbol]:
    x_symbols, alpha_symbols = phase_symbols(n)
    return {str(s): s for s in x_symbols + alpha_symbols}


def _parse(value: Any, n: int) -> sp.Expr:
    if isinstance(value, str):
        return sp.sympify(value, locals=_symbols_locals(n))
    return sp.sympify(value)


def _matrix(values: Any, n: int) -> sp.Matrix:
    if values is None:
        return sp.eye(n)
    matrix = sp.Matrix([[_parse(entry, n) for entry in row] for row in values])
    if matrix.shape != (n, n):
        raise HamiltonianError(f"Expected an {n}x{n} matrix, got shape {matrix.shape}")
    return matrix


def _chart_from_params(params: Dict[str, Any], n: int, default: Optional[Chart] = None) -> Chart:
    if "torus" in params:
        return Chart.torus(params["torus"])
    if "box" in params:
        lower, upper = params["box"]
        return Chart("box", tuple(lower), tuple(upper))
    return default or Chart.box(n)


def _quadratic_form(matrix: sp.Matrix, alpha: Sequence[sp.Symbol]) -> sp.Expr:
    vector = sp.Matrix(alpha)
    return sp.expand((vector.T * matrix * vector)[0, 0])


def _euclidean(params: Dict[str, Any]) -> ChartHamiltonian:
    n = int(params.get("n", 2))
    _, alpha = phase_symbols(n)
    expr = sum(a**2 for a in alpha) / 2
    return ChartHamiltonian("euclidean", n, expr, _chart_from_params(params, n), params)


def _riemannian(params: Dict[str, Any]) -> ChartHamiltonian:
    n = int(params.get("n", 2))
    _, alpha = phase_symbols(n)
    cometric = _matrix(params.get("cometric"), n)
    expr = _quadratic_form(cometric, alpha) / 2
    return ChartHamiltonian(params.get("name", "riemannian"), n, expr, _chart_from_params(params, n), params)


def _anisotropic(params: Dict[str, Any]) -> ChartHamiltonian:
    H = _riemannian({**params, "name": "anisotropic"})
    if H.depends_on_position:
        raise HamiltonianError("anisotropic Hamiltonian needs a constant cometric")
    return H


def _mechanical(params: Dict[str, Any]) -> ChartHamiltonian:
    n = int(params.get("n", 2))
    base = _riemannian({**params, "n": n})
    potential = _parse(params.get("potential", "x0**2/2"), n)
    return ChartHamiltonian(
        params.get("name", "mechanical"), n, base.expr + potential, base.chart, params
    )


def _harmonic_oscillator(params: Dict[str, Any]) -> ChartHamiltonian:
    n = int(params.get("n", 1))
    frequency = float(params.get("frequency", 1.0))
    x, _ = phase_symbols(n)
    potential = sp.Rational(1, 2) * sp.nsimplify(frequency) ** 2 * sum(xi**2 for xi in x)
    return _mechanical({"n": n, "potential": str(potential), "name": "harmonic_oscillator"})


def _randers(params: Dict[str, Any]) -> ChartHamiltonian:
    n = int(params.get("n", 2))
    _, alpha = phase_symbols(n)
    cometric = _matrix(params.get("cometric"), n)
    wind = [sp.nsimplify(w) for w in params.get("wind", [0.3] + [0] * (n - 1))]
    if len(wind) != n:
        raise HamiltonianError(f"Randers wind needs {n} components, got {len(wind)}")
    if cometric.free_symbols or any(sp.sympify(w).free_symbols for w in wind):
        raise HamiltonianError("randers builtin supports constant cometric and wind only")
    metric = np.array(cometric.inv(), dtype=float)
    w = np.array(wind, dtype=float)
    if float(w @ metric @ w) >= 1.0:
        raise HamiltonianError("Randers wind must have norm below 1 for F* to be positive-definite")
    dual_norm = sp.sqrt(_quadratic_form(cometric, alpha))
    expr = (dual_norm + sum(wi * ai for wi, ai in zip(wind, alpha))) ** 2 / 2
    return ChartHamiltonian("randers", n, expr, _chart_from_params(params, n), params)


def _sphere(params: Dict[str, Any]) -> ChartHamiltonian:
    radius = sp.nsimplify(params.get("radius", 1))
    chart = params.get("chart", "stereographic")
    (x0, x1), (a0, a1) = phase_symbols(2)
    if chart == "stereographic":
        expr = (1 + x0**2 + x1**2) ** 2 * (a0**2 + a1**2) / (8 * radius**2)
        default = Chart("box", (-3.0, -3.0), (3.0, 3.0))
    elif chart == "polar":
        expr = (a0**2 + a1**2 / sp.sin(x0) ** 2) / (2 * radius**2)
        default = Chart("box", (0.05, -50.0), (np.pi - 0.05, 50.0))
    else:
        raise HamiltonianError(f"Unknown sphere chart: {chart}")
    return ChartHamiltonian("sphere", 2, expr, _chart_from_params(params, 2, default), params)


def _hyperbolic(params: Dict[str, Any]) -> ChartHamiltonian:
    (x0, x1), (a0, a1) = phase_symbols(2)
    expr = x1**2 * (a0**2 + a1**2) / 2
    default = Chart("box", (-50.0, 1e-3), (50.0, 1e3))
    return ChartHamiltonian("hyperbolic", 2, expr, _chart_from_params(params, 2, default), params)


def is_two_homogeneous(H: ChartHamiltonian, samples: int = 6) -> bool:
    """Sampled check of H(x, 2 alpha) = 4 H(x, alpha)."""
    rng = np.random.default_rng(1)
    points = H.chart.sample(rng, samples)
    for x, alpha in zip(points, rng.normal(size=(samples, H.n))):
        single = H.value(x, alpha)
        double = H.value(x, 2.0 * alpha)
        if abs(double - 4.0 * single) > 1e-10 * (1.0 + abs(double)):
            return False
    return True


def _validate_profile(profile: sp.Expr) -> List[str]:
    t = PROFILE_VARIABLE
    errors = []
    if sp.limit(profile, t, 0, "+") != 0:
        errors.append("h(0) must vanish")
    if sp.limit(sp.diff(profile, t), t, 0, "+") != 0:
        errors.append("h'(0) must vanish")
    second = sp.lambdify(t, sp.diff(profile, t, 2), modules="numpy")
    for sample in PROFILE_SAMPLES:
        value = float(second(sample))
        if not np.isfinite(value) or value <= 0:
            errors.append(f"h''({sample}) = {value:.3e} is not positive")
    return errors


def parse_profile(profile: Any) -> sp.Expr:
    """Parse a deformation profile h(t) given as an expression in t."""
    if isinstance(profile, sp.Expr):
        return profile.subs(sp.Symbol("t"), PROFILE_VARIABLE)
    return sp.sympify(str(profile), locals={"t": PROFILE_VARIABLE})


def deform(base: ChartHamiltonian, profile: Any, name: Optional[str] = None) -> ChartHamiltonian:
    """
    Convex deformation h(F*) of a 2-homogeneous base with F* = sqrt(2 H_base).

    Raises:
        DeformationError: If the profile or the base breaks the preconditions
    """
    profile = parse_profile(profile)
    errors = _validate_profile(profile)
    if not base.normalized or not is_two_homogeneous(base):
        errors.append(f"base {base.name} is not a 2-homogeneous Finsler Hamiltonian")
    if errors:
        message = "deformation violates convexity preconditions:\n"
        message += "\n".join(f"  - {error}" for error in errors)
        raise DeformationError(message)

    dual_norm = sp.sqrt(2 * base.expr)
    expr = profile.subs(PROFILE_VARIABLE, dual_norm)
    params = {**base.params, "profile": str(profile)}
    return ChartHamiltonian(name or f"deformation({base.name})", base.n, expr, base.chart, params)


def _base_from_params(params: Dict[str, Any]) -> ChartHamiltonian:
    base = params.get("base", {"name": "euclidean"})
    return builtin(base["name"], base.get("params", {}), check=False)


def _deformation(params: Dict[str, Any]) -> ChartHamiltonian:
    if "profile" in params:
        profile = parse_profile(params["profile"])
    else:
        scale = sp.nsimplify(params.get("scale", 1))
        profile = (scale * PROFILE_VARIABLE) ** 2 / 2
    return deform(_base_from_params(params), profile)


def _p_homogeneous(params: Dict[str, Any]) -> ChartHamiltonian:
    p = sp.nsimplify(params.get("p", 3))
    if p <= 1:
        raise DeformationError("deformation violates convexity preconditions: p must exceed 1")
    H = deform(_base_from_params(params), PROFILE_VARIABLE**p / p, name="p_homogeneous")
    H.params["p"] = p
    return H


BUILTINS: Dict[str, Callable[[Dict[str, Any]], ChartHamiltonian]] = {
    "euclidean": _euclidean,
    "riemannian": _riemannian,
    "anisotropic": _anisotropic,
    "mechanical": _mechanical,
    "harmonic_oscillator": _harmonic_oscillator,
    "randers": _randers,
    "sphere": _sphere,
    "hyperbolic": _hyperbolic,
    "deformation": _deformation,
    "p_homogeneous": _p_homogeneous,
}


def available_builtins() -> List[str]:
    return sorted(BUILTINS)


def builtin(name: str, params: Optional[Dict[str, Any]] = None, check: bool = True) -> ChartHamiltonian:
    """
    Build a named fixture Hamiltonian.

    Args:
        name: One of available_builtins()
        params: Builder parameters, e.g. {"n": 3} or {"p": 3, "base": {...}}
        check: Run the invariant sampler on the result

    Raises:
        HamiltonianError: For unknown names, bad parameters or failed invariants
    """
    if name not in BUILTINS:
        raise HamiltonianError(
            f"Unknown builtin {name!r}. Available: {', '.join(available_builtins())}"
        )
    H = BUILTINS[name](dict(params or {}))
    if check:
        check_invariants(H)
    logger.debug(f"Built {H!r}")
    return H
