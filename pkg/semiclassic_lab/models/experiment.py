import tomllib
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, root_validator, validator

from semiclassic_lab.config import Settings
from semiclassic_lab.physics.initdata import TARGETS
from semiclassic_lab.physics.potentials import CATALOG

ExperimentKind = Literal[
    "convergence_sweep",
    "conservation_audit",
    "assumption_check",
    "residual_scan",
    "rlf_stability",
    "identity_suite",
]


class ExperimentSection(BaseModel):
    kind: ExperimentKind
    name: str = ""
    seed: Optional[int] = None
    output_dir: Optional[str] = None


class GridSection(BaseModel):
    dim: int = 1
    points: int = 512
    halfwidth: float = 8.0

    @validator("points")
    def points_power_of_two(cls, v):
        if v < 2 or v & (v - 1):
            raise ValueError(f"points per axis must be a power of two, got {v}")
        return v

    @validator("dim")
    def dim_supported(cls, v):
        if v not in (1, 2, 3):
            raise ValueError(f"grids of dimension {v} are not supported")
        return v


class SingularEntry(BaseModel):
    charge: float = 1.0
    center: Optional[List[float]] = None
    pair: Optional[List[int]] = None


class PotentialSection(BaseModel):
    name: str = "zero"
    params: Dict[str, Any] = Field(default_factory=dict)
    singular: List[SingularEntry] = Field(default_factory=list)

    @validator("name")
    def name_in_catalog(cls, v):
        if v not in CATALOG:
            raise ValueError(f"unknown potential '{v}', catalog has {sorted(CATALOG)}")
        return v


class TargetSection(BaseModel):
    name: str = "gaussian"
    params: Dict[str, Any] = Field(default_factory=dict)

    @validator("name")
    def name_in_catalog(cls, v):
        if v not in TARGETS:
            raise ValueError(f"unknown target '{v}', catalog has {sorted(TARGETS)}")
        return v


class InitialSection(BaseModel):
    kind: Literal["hermite", "toeplitz", "coherent_mixture"] = "toeplitz"
    params: Dict[str, Any] = Field(default_factory=dict)
    centers: List[List[float]] = Field(default_factory=list)
    weights: Optional[List[float]] = None
    target: Optional[TargetSection] = None

    @root_validator(skip_on_failure=True)
    def kind_has_inputs(cls, values):
        if values["kind"] == "toeplitz" and values.get("target") is None:
            raise ValueError("Toeplitz initial data needs a [initial.target] symbol")
        if values["kind"] == "coherent_mixture" and not values.get("centers"):
            raise ValueError("a coherent mixture needs at least one center")
        return values


class SweepSection(BaseModel):
    epsilons: List[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    horizon: float = 1.0
    record_times: List[float] = Field(default_factory=list)
    record_interval: Optional[float] = None
    dt: float = 0.01
    dt_halvings: int = 3

    @validator("epsilons")
    def strictly_decreasing(cls, v):
        if not v:
            raise ValueError("the epsilon list is empty")
        if any(not 0 < e < 1 for e in v):
            raise ValueError(f"every epsilon must lie in (0, 1), got {v}")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError(f"the epsilon list must be strictly decreasing, got {v}")
        return v

    @root_validator(skip_on_failure=True)
    def times_within_horizon(cls, values):
        horizon = values["horizon"]
        if any(t < 0 or t > horizon + 1e-12 for t in values["record_times"]):
            raise ValueError(f"record times must lie in [0, {horizon}]")
        return values

    def times(self) -> List[float]:
        """Record times of the comparison tables; the horizon alone when none are named."""
        return sorted(set(self.record_times)) or [self.horizon]


class ClassicalSection(BaseModel):
    particles: int = 200000
    delta: float = 0.025
    deltas: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    step: float = 0.01
    r_min: float = 0.0
    bandwidth: Optional[float] = None


class LatticeSection(BaseModel):
    """Phase lattice on which classical and Husimi densities are compared."""
    x_halfwidth: Optional[float] = None
    p_halfwidth: float = 4.0
    points: int = 128
    frequencies: int = 8
    scale_fractions: List[float] = Field(default_factory=lambda: [0.9, 0.45])


class ExperimentConfig(BaseModel):
    experiment: ExperimentSection
    grid: GridSection = Field(default_factory=GridSection)
    potential: PotentialSection = Field(default_factory=PotentialSection)
    initial: Optional[InitialSection] = None
    sweep: SweepSection = Field(default_factory=SweepSection)
    classical: ClassicalSection = Field(default_factory=ClassicalSection)
    lattice: LatticeSection = Field(default_factory=LatticeSection)
    tolerances: Dict[str, float] = Field(default_factory=dict)

    @validator("tolerances")
    def known_tolerances(cls, v):
        unknown = [k for k in v if k.upper() not in Settings.__fields__]
        if unknown:
            raise ValueError(f"unknown tolerance keys {unknown}")
        return {k.upper(): float(value) for k, value in v.items()}

    @classmethod
    def from_toml(cls, path: str) -> "ExperimentConfig":
        with open(path, "rb") as f:
            return cls.parse_obj(tomllib.load(f))
