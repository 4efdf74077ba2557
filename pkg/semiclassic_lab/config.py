from pydantic import BaseSettings
from pydantic import Field
from typing import Optional

class Settings(BaseSettings):
    """Global settings configuration using environment variables"""

    OUTPUT_DIR: str = Field(
        default="output",
        description="Directory where reports, tables and snapshots are written"
    )

    LOG_LEVEL: str = Field(
        default="INFO",
        description="Root logging level"
    )

    DEFAULT_SEED: int = Field(
        default=20240607,
        description="Seed used when the experiment configuration does not name one"
    )

    FFT_WORKERS: int = Field(
        default=4,
        description="Worker threads handed to scipy.fft"
    )

    SWEEP_WORKERS: int = Field(
        default=1,
        description="Epsilon cells of a sweep evaluated concurrently"
    )

    WRITE_SNAPSHOTS: bool = Field(
        default=True,
        description="Write binary snapshots of initial states, final Husimi fields and particle ensembles"
    )

    LEDGER_FILENAME: str = Field(
        default="ledger.db",
        description="SQLite results ledger written next to the CSV tables"
    )

    SCHEMA_NAME: str = Field(
        default="semiclassic-lab results ledger",
        description="Name of the ledger schema"
    )

    SCHEMA_VERSION: str = Field(
        default="1.0.0",
        description="Version of the output schema"
    )

    SCHEMA_DESCRIPTION: str = Field(
        default="Convergence rows, conservation audits and bound ledgers of semiclassical experiments",
        description="Description of the schema"
    )

    SCHEMA_DIALECT: str = Field(
        default="sqlite",
        description="Dialect of the schema"
    )

    # Tolerances. Every one of them can also be overridden per experiment
    # through the [tolerances] table of the configuration file.
    QUADRATURE_TOLERANCE: float = Field(default=1e-10, description="Stored-mass agreement of density fields")
    UNITARITY_TOLERANCE: float = Field(default=1e-12, description="Relative round trip of the unitary transform")
    TRACE_TOLERANCE: float = Field(default=1e-10, description="Weight sum of a mixed state")
    KERNEL_TRACE_TOLERANCE: float = Field(default=1e-8, description="Weight sum against kernel-diagonal quadrature")
    ORTHONORMALITY_TOLERANCE: float = Field(default=1e-8, description="Gram matrix distance to the identity")
    TRUNCATION_TOLERANCE: float = Field(default=1e-8, description="Spectral weight dropped by finite-rank truncation")
    BOUNDARY_MASS_TOLERANCE: float = Field(default=1e-6, description="Mass allowed in the edge band of the box")
    BOUNDARY_BAND_FRACTION: float = Field(default=0.05, description="Width of the monitored edge band per axis")
    NORM_DRIFT_TOLERANCE: float = Field(default=1e-10, description="Eigenfunction norm drift over a propagation")
    STEP_NORM_TOLERANCE: float = Field(default=1e-12, description="Eigenfunction norm change over a single split step")
    WIGNER_REALNESS_TOLERANCE: float = Field(default=1e-10, description="Imaginary residue of the Wigner transform")
    HUSIMI_POSITIVITY_TOLERANCE: float = Field(default=1e-12, description="Most negative admissible Husimi value")
    HUSIMI_ROUTE_TOLERANCE: float = Field(default=1e-6, description="Sup-norm gap between the two Husimi routes")
    MARGINAL_TOLERANCE: float = Field(default=1e-8, description="Marginal identities")
    PAIRING_TOLERANCE: float = Field(default=1e-6, description="Trace pairing against direct expectation")
    SYMBOL_TAIL_TOLERANCE: float = Field(default=1e-10, description="Relative upper-band Fourier content below which a symbol coefficient counts as periodic")
    WIGNER_RESOLUTION_FACTOR: float = Field(default=0.5, description="Largest admissible dx / sqrt(eps)")
    MOMENTUM_TAIL_TOLERANCE: float = Field(default=1e-10, description="Momentum mass outside the Wigner lattice")
    CONSERVATION_TOLERANCE: float = Field(default=1e-6, description="Drift of energy and H^2 sums per unit of (T / dt) dt^2")
    TRACE_DRIFT_TOLERANCE: float = Field(default=1e-10, description="Absolute trace drift over a propagation")
    BOUND_SLACK: float = Field(default=1e-8, description="Additive slack on propagated bounds")
    CFL_CAP: float = Field(default=0.7853981633974483, description="Largest kinetic phase per step on the occupied spectrum")
    STEP_EPS_FRACTION: float = Field(default=0.1, description="Time step is capped at this fraction of eps")
    MASS_MISMATCH_TOLERANCE: float = Field(default=1e-6, description="Mass agreement required by d_P")
    FOURIER_TAIL_TOLERANCE: float = Field(default=1e-8, description="Fourier mass of a test function outside the y window")
    RESIDUAL_TOLERANCE: float = Field(default=1e-4, description="Weak residual of reference runs")
    EXCLUDED_MASS_TOLERANCE: float = Field(default=1e-4, description="Particle mass frozen by the singular guard")
    DISOP_BOUND: float = Field(default=10.0, description="Largest admissible rho / eps^n bound when the experiment names none")
    MOMENT_GROWTH_TOLERANCE: float = Field(default=0.1, description="Relative growth of a truncated moment that marks it divergent")
    VOLUME_TOLERANCE: float = Field(default=1e-10, description="Leapfrog Jacobian distance to one")
    ERROR_ORDER_THRESHOLD: float = Field(default=1.8, description="Minimal fitted order of the remainder pairing")
    CORRECTION_ORDER_THRESHOLD: float = Field(default=0.45, description="Minimal fitted order of the Husimi correction")

    # Optional path of a default experiment file used when --config is omitted
    DEFAULT_CONFIG: Optional[str] = Field(
        default=None,
        description="Experiment configuration used when none is passed"
    )

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = True

settings = Settings()
