"""Exception hierarchy shared by every hamflow module."""

from typing import List


class HamflowError(Exception):
    """Base class for all hamflow failures."""

    pass


class SmoothDomainError(HamflowError):
    """Raised when a jet evaluation produces non-finite values."""

    pass


class StepSizeError(HamflowError):
    """Raised when a finite-difference derivative cannot reach the requested accuracy."""

    pass


class HamiltonianError(HamflowError):
    """Raised when a Hamiltonian fails its invariants or cannot be built."""

    pass


class DeformationError(HamiltonianError):
    """Raised when a deformation profile violates the convexity preconditions."""

    pass


class LegendreError(HamflowError):
    """Raised when the inverse Legendre transform does not converge."""

    pass


class ChartExitError(HamflowError):
    """Raised when a trajectory leaves the chart domain."""

    def __init__(self, message: str, exit_time: float):
        super().__init__(message)
        self.exit_time = exit_time


class ConservationError(HamflowError):
    """Raised when energy drift stays above tolerance after step refinement."""

    pass


class SymplecticDefectError(HamflowError):
    """Raised when the linearized flow is not symplectic to tolerance."""

    pass


class ScaleError(HamflowError):
    """Raised when no scale a solves H(x, a alpha) = c."""

    pass


class ConvexityError(HamflowError):
    """Raised when H_alpha_alpha is not positive-definite along a trajectory."""

    pass


class FrameError(HamflowError):
    """Raised when the canonical frame defects exceed tolerance."""

    pass


class CurvatureError(HamflowError):
    """Raised when the curvature operator cannot be extracted reliably."""

    pass


class CoordinateFormulaError(HamflowError):
    """Raised when the coordinate curvature formula is used outside adapted coordinates."""

    pass


class CriticalPointError(HamflowError):
    """Raised when an operator needs du != 0 and the point is critical."""

    pass


class RiccatiBlowUpError(HamflowError):
    """Raised when the Riccati pair hits a conjugate point."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class FocalTimeError(HamflowError):
    """Raised when a model function is evaluated past its focal time."""

    pass


class ComparisonHypothesisError(HamflowError):
    """Raised when the curvature lower bound of a comparison check fails."""

    pass


class StabilityError(HamflowError):
    """Raised when an explicit step increases the energy."""

    pass


class InnerSolveError(HamflowError):
    """Raised when a convex inner minimization does not converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class PositivityError(HamflowError):
    """Raised when a density falls below its positivity floor."""

    pass


class TranslationInvarianceError(HamflowError):
    """Raised when a 1D closed form receives a position-dependent Hamiltonian."""

    pass


class CDFInversionError(HamflowError):
    """Raised when a target measure has atoms the grid cannot resolve."""

    pass


class InjectivityError(HamflowError):
    """Raised when a displacement interpolation folds over."""

    pass


class DensityError(HamflowError):
    """Raised for invalid density profiles and unreliable Fisher integrals."""

    pass


class ConfigError(HamflowError):
    """Raised when an experiment configuration is invalid."""

    def __init__(self, messages: List[str]):
        super().__init__(
            "Invalid configuration:\n" + "\n".join(f"  - {m}" for m in messages)
        )
        self.messages = list(messages)


class AcceptanceFilterError(HamflowError):
    """Raised when an acceptance filter matches no criterion."""

    def __init__(self, name: str, available: List[str]):
        super().__init__(
            f'No acceptance criterion matches "{name}". Available: {", ".join(available)}'
        )
        self.available = list(available)
