"""Derivative oracles: symbolic jets in phase space and Richardson differences in time."""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable, List, NamedTuple, Optional, Sequence, Union

import numpy as np
import sympy as sp

from .errors import SmoothDomainError, StepSizeError

logger = logging.getLogger(__name__)

DEFAULT_STEP_FACTOR = 1e-3
RICHARDSON_STEPS = (1, 2, 4)

Number = Union[int, float]


@dataclass(frozen=True)
class Jet3:
    """Truncated Taylor data of a scalar field at one point."""

    value: float
    gradient: Optional[np.ndarray] = None
    hessian: Optional[np.ndarray] = None
    third: Optional[np.ndarray] = None


def _stack(leaves: Any, shape: tuple) -> np.ndarray:
    """Turn the nested-list output of a lambdified array into an ndarray.

    Constant entries come back as Python scalars, so each leaf is broadcast
    to the evaluation shape before stacking.
    """
    if isinstance(leaves, (list, tuple)):
        return np.stack([_stack(leaf, shape) for leaf in leaves])
    return np.broadcast_to(np.asarray(leaves, dtype=float), shape)


class ScalarField:
    """A smooth scalar field given by a sympy expression in fixed variables.

    Derivative tensors are derived symbolically once and lambdified lazily,
    so a field can be shared between threads after construction.
    """

    def __init__(self, expr: Any, variables: Sequence[sp.Symbol]):
        self.expr = sp.sympify(expr)
        self.variables = tuple(variables)
        unknown = self.expr.free_symbols - set(self.variables)
        if unknown:
            names = ", ".join(sorted(str(s) for s in unknown))
            raise ValueError(f"Expression uses undeclared symbols: {names}")

    @classmethod
    def from_string(cls, text: str, variables: Sequence[sp.Symbol]) -> "ScalarField":
        """Parse an expression such as ``"x0**2/2 + sin(x1)"``."""
        local = {str(v): v for v in variables}
        return cls(sp.sympify(text, locals=local), variables)

    def __repr__(self) -> str:
        return f"ScalarField({self.expr})"

    @property
    def dim(self) -> int:
        return len(self.variables)

    # arithmetic

    def _other(self, other: Any) -> sp.Expr:
        if isinstance(other, ScalarField):
            if other.variables != self.variables:
                raise ValueError("Scalar fields live on different variables")
            return other.expr
        return sp.sympify(other)

    def __add__(self, other: Any) -> "ScalarField":
        return ScalarField(self.expr + self._other(other), self.variables)

    __radd__ = __add__

    def __sub__(self, other: Any) -> "ScalarField":
        return ScalarField(self.expr - self._other(other), self.variables)

    def __rsub__(self, other: Any) -> "ScalarField":
        return ScalarField(self._other(other) - self.expr, self.variables)

    def __mul__(self, other: Any) -> "ScalarField":
        return ScalarField(self.expr * self._other(other), self.variables)

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "ScalarField":
        return ScalarField(self.expr / self._other(other), self.variables)

    def __neg__(self) -> "ScalarField":
        return ScalarField(-self.expr, self.variables)

    def __pow__(self, exponent: Number) -> "ScalarField":
        return ScalarField(self.expr ** sp.sympify(exponent), self.variables)

    def apply(self, outer: Callable[[sp.Expr], sp.Expr]) -> "ScalarField":
        """Compose with a univariate sympy function, e.g. ``field.apply(sp.exp)``."""
        return ScalarField(outer(self.expr), self.variables)

    def diff(self, variable: sp.Symbol) -> "ScalarField":
        return ScalarField(sp.diff(self.expr, variable), self.variables)

    # symbolic derivative tensors

    @cached_property
    def gradient_expr(self) -> sp.Array:
        return sp.derive_by_array(self.expr, self.variables)

    @cached_property
    def hessian_expr(self) -> sp.Array:
        return sp.derive_by_array(self.gradient_expr, self.variables)

    @cached_property
    def third_expr(self) -> sp.Array:
        return sp.derive_by_array(self.hessian_expr, self.variables)

    @cached_property
    def _value_fn(self) -> Callable:
        return sp.lambdify(self.variables, self.expr, modules="numpy")

    @cached_property
    def _gradient_fn(self) -> Callable:
        return sp.lambdify(self.variables, self.gradient_expr.tolist(), modules="numpy")

    @cached_property
    def _hessian_fn(self) -> Callable:
        return sp.lambdify(self.variables, self.hessian_expr.tolist(), modules="numpy")

    @cached_property
    def _third_fn(self) -> Callable:
        return sp.lambdify(self.variables, self.third_expr.tolist(), modules="numpy")

    # numeric evaluation

    def _args(self, point: Sequence[float]) -> List[float]:
        point = np.asarray(point, dtype=float)
        if point.shape != (self.dim,):
            raise ValueError(f"Expected a point of length {self.dim}, got shape {point.shape}")
        return list(point)

    def value(self, point: Sequence[float]) -> float:
        return float(self._value_fn(*self._args(point)))

    def gradient(self, point: Sequence[float]) -> np.ndarray:
        return np.array(self._gradient_fn(*self._args(point)), dtype=float)

    def hessian(self, point: Sequence[float]) -> np.ndarray:
        return np.array(self._hessian_fn(*self._args(point)), dtype=float)

    def third(self, point: Sequence[float]) -> np.ndarray:
        return np.array(self._third_fn(*self._args(point)), dtype=float)

    def value_on(self, *coords: np.ndarray) -> np.ndarray:
        """Evaluate on broadcastable coordinate arrays."""
        shape = np.broadcast(*coords).shape
        return _stack(self._value_fn(*coords), shape)

    def gradient_on(self, *coords: np.ndarray) -> np.ndarray:
        """Gradient on broadcastable coordinate arrays, component axis first."""
        shape = np.broadcast(*coords).shape
        return _stack(self._gradient_fn(*coords), shape)

    def hessian_on(self, *coords: np.ndarray) -> np.ndarray:
        shape = np.broadcast(*coords).shape
        return _stack(self._hessian_fn(*coords), shape)


def jet_eval(f: ScalarField, point: Sequence[float], order: int = 3) -> Jet3:
    """
    Evaluate a scalar field and its derivatives up to ``order``.

    Args:
        f: Scalar field oracle
        point: Evaluation point, one coordinate per variable of ``f``
        order: Highest derivative order, 1 to 3

    Returns:
        Jet3 with the unrequested slots left as None

    Raises:
        SmoothDomainError: If any requested slot is not finite
    """
    if order not in (1, 2, 3):
        raise ValueError(f"Jet order must be 1, 2 or 3, got {order}")

    value = f.value(point)
    gradient = f.gradient(point)
    hessian = f.hessian(point) if order >= 2 else None
    third = f.third(point) if order >= 3 else None

    for name, slot in (
        ("value", value),
        ("gradient", gradient),
        ("hessian", hessian),
        ("third", third),
    ):
        if slot is not None and not np.all(np.isfinite(slot)):
            raise SmoothDomainError(
                f"evaluation outside smooth domain: {name} of {f} is not finite at {list(point)}"
            )
    return Jet3(value=value, gradient=gradient, hessian=hessian, third=third)


class CurveDerivatives(NamedTuple):
    first: Any
    second: Any
    first_error: float
    second_error: Optional[float]


def _extrapolate(d1: Any, d2: Any, d4: Any) -> tuple:
    """Two Richardson levels on central differences taken at steps h, 2h, 4h."""
    level_h = (4.0 * d1 - d2) / 3.0
    level_2h = (4.0 * d2 - d4) / 3.0
    best = (16.0 * level_h - level_2h) / 15.0
    error = float(np.max(np.abs(np.asarray(best) - np.asarray(level_h))))
    return best, error


def curve_derivatives(
    g: Callable[[float], Any],
    t0: float,
    order: int = 2,
    h0: Optional[float] = None,
    tol: Optional[float] = None,
) -> CurveDerivatives:
    """
    Derivatives of a curve t -> g(t) at t0 by extrapolated central differences.

    ``g`` may return a scalar or an array; arrays are differentiated
    componentwise. The curve is sampled on [t0 - 4 h0, t0 + 4 h0].

    Raises:
        StepSizeError: If an error estimate exceeds ``tol``
    """
    if order not in (1, 2):
        raise ValueError(f"Curve derivative order must be 1 or 2, got {order}")
    if h0 is None:
        h0 = DEFAULT_STEP_FACTOR * (1.0 + abs(t0))

    center = np.asarray(g(t0), dtype=float) if order == 2 else None
    firsts = []
    seconds = []
    for k in RICHARDSON_STEPS:
        h = k * h0
        plus = np.asarray(g(t0 + h), dtype=float)
        minus = np.asarray(g(t0 - h), dtype=float)
        firsts.append((plus - minus) / (2.0 * h))
        if order == 2:
            seconds.append((plus - 2.0 * center + minus) / (h * h))

    first, first_error = _extrapolate(*firsts)
    second, second_error = (None, None)
    if order == 2:
        second, second_error = _extrapolate(*seconds)

    logger.debug(f"curve derivatives at t={t0}: errors {first_error:.2e}, {second_error}")
    if tol is not None:
        worst = max(first_error, second_error or 0.0)
        if worst > tol:
            raise StepSizeError(
                f"step size unresolvable at t={t0}: error estimate {worst:.3e} exceeds {tol:.3e}"
            )
    if np.ndim(first) == 0:
        first = float(first)
        second = None if second is None else float(second)
    return CurveDerivatives(first, second, first_error, second_error)


class SampledCurve:
    """Lookup of values stored on a uniform time grid, usable as a curve oracle."""

    def __init__(self, times: np.ndarray, values: np.ndarray):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values)
        self.dt = float(self.times[1] - self.times[0])

    def index_of(self, t: float) -> int:
        k = (t - self.times[0]) / self.dt
        index = int(round(k))
        if abs(k - index) > 1e-6 or not 0 <= index < len(self.times):
            raise StepSizeError(f"time {t} is not a grid point of the sampled curve")
        return index

    def __call__(self, t: float) -> np.ndarray:
        return self.values[self.index_of(t)]
