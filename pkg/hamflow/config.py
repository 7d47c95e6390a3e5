"""Experiment configuration models and loading."""

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, Field, ValidationError, root_validator, validator

from .errors import ConfigError
from .hamiltonians import available_builtins

logger = logging.getLogger(__name__)

DEFAULT_OUT_DIR = "hamflow-out"
OUT_DIR_ENV = "HAMFLOW_OUT"


class ExperimentKind(str, Enum):
    CURVATURE = "curvature"
    RICCATI = "riccati"
    BOCHNER = "bochner"
    COMPARE = "compare"
    MCP = "mcp"
    HEAT = "heat"
    MMS = "mms"
    ENTROPYFLOW = "entropyflow"
    HARMONIC = "harmonic"
    TRANSPORT = "transport"

    def __str__(self) -> str:
        return self.value


class OracleKind(str, Enum):
    MODEL = "model"
    TRAJECTORY = "trajectory"


class ReferenceKind(str, Enum):
    GAUSSIAN = "gaussian"
    LEBESGUE = "lebesgue"


class _Strict(BaseModel):
    class Config:
        extra = "forbid"


class HamiltonianConfig(_Strict):
    name: str = "euclidean"
    params: Dict[str, Any] = Field(default_factory=dict)

    @validator("name")
    def _known(cls, name: str) -> str:
        if name not in available_builtins():
            raise ValueError(f"unknown builtin {name!r}; available: {', '.join(available_builtins())}")
        return name


class TrajectoryConfig(_Strict):
    x: List[float] = Field(default_factory=lambda: [0.5, 0.0])
    alpha: List[float] = Field(default_factory=lambda: [1.0, 0.0])
    T: float = Field(0.5, gt=0)
    steps_per_unit: int = Field(1024, ge=64)
    function: str = "(x0**2 + x1**2)/2"
    N: Optional[float] = None

    @root_validator(skip_on_failure=True)
    def _same_length(cls, values: Dict[str, Any]) -> Dict[str, Any]:
        if len(values["x"]) != len(values["alpha"]):
            raise ValueError("x and alpha must have the same length")
        return values


class GridConfig(_Strict):
    shape: List[int] = Field(default_factory=lambda: [128])
    length: float = Field(1.0, gt=0)
    initial: str = "1 + sin(2*pi*x0)/2"
    second_initial: Optional[str] = None
    T: float = Field(0.05, gt=0)
    dt: Optional[float] = Field(None, gt=0)
    mms_steps: List[int] = Field(default_factory=lambda: [16, 32, 64])
    snapshot_every: int = Field(0, ge=0)

    @validator("shape")
    def _grid_shape(cls, shape: List[int]) -> List[int]:
        if len(shape) not in (1, 2) or min(shape) < 8:
            raise ValueError("grid shape must have 1 or 2 axes of at least 8 cells")
        return shape


class TransportConfig(_Strict):
    cells: int = Field(8192, ge=8)
    lower: float = -10.0
    upper: float = 10.0
    source_mean: float = 1.0
    target_mean: float = 0.0
    quartic: float = Field(0.0, ge=0)
    reference: ReferenceKind = ReferenceKind.GAUSSIAN
    lagrangian: Optional[str] = None
    horizon: float = Field(1.0, gt=0)
    K: float = 1.0

    @root_validator(skip_on_failure=True)
    def _interval(cls, values: Dict[str, Any]) -> Dict[str, Any]:
        if values["upper"] <= values["lower"]:
            raise ValueError("transport interval needs upper > lower")
        return values


class ComparisonConfig(_Strict):
    oracle: OracleKind = OracleKind.MODEL
    K: float = 0.0
    N: float = Field(2.0, ge=1)
    n: int = Field(2, ge=1)
    T: float = Field(1.0, gt=0)
    t0: float = Field(1e-3, gt=0)
    samples: int = Field(400, ge=10)


class ExperimentConfig(_Strict):
    name: str
    experiment: ExperimentKind
    seed: int = 0
    hamiltonian: HamiltonianConfig = Field(default_factory=HamiltonianConfig)
    weight: Union[float, str] = 0
    trajectory: TrajectoryConfig = Field(default_factory=TrajectoryConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    transport: TransportConfig = Field(default_factory=TransportConfig)
    comparison: ComparisonConfig = Field(default_factory=ComparisonConfig)
    # bound on the judged defects, and on minus the judged slacks, of a finished run
    tolerance: float = Field(1e-4, gt=0)

    @validator("name")
    def _path_safe(cls, name: str) -> str:
        if not name or "/" in name or name.startswith("."):
            raise ValueError("experiment name must be a plain directory name")
        return name


class BatchConfig(_Strict):
    experiments: List[ExperimentConfig]

    @validator("experiments")
    def _unique_names(cls, experiments: List[ExperimentConfig]) -> List[ExperimentConfig]:
        names = [e.name for e in experiments]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValueError(f"duplicate experiment names: {', '.join(duplicates)}")
        return experiments


def config_schema() -> str:
    """The published JSON schema for batch files."""
    return BatchConfig.schema_json(indent=2)


def _messages(exc: ValidationError) -> List[str]:
    return [f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}" for error in exc.errors()]


def parse_config(raw: Any) -> BatchConfig:
    """
    Validate a decoded config: a single experiment object or {"experiments": [...]}.

    Raises:
        ConfigError: With every validation message
    """
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    if "experiments" not in raw:
        raw = {"experiments": [raw]}
    try:
        return BatchConfig.parse_obj(raw)
    except ValidationError as exc:
        raise ConfigError(_messages(exc)) from exc


def load_config(path: Union[str, Path]) -> BatchConfig:
    """
    Read and validate a JSON config file.

    Raises:
        ConfigError: If the file is missing, not JSON or invalid
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError([f"{path}: file not found"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON: {exc}"]) from exc
    batch = parse_config(raw)
    logger.info(f"Loaded {len(batch.experiments)} experiment(s) from {path}")
    return batch
