from abc import ABC, abstractmethod
from fractions import Fraction
from typing import Dict, List, Optional, Sequence
import math
import logging
import os
import sqlite3

import numpy as np
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker, Session

from semiclassic_lab.config import settings
from semiclassic_lab.errors import ConfigurationError, ParameterError
from semiclassic_lab.models.experiment import ExperimentConfig
from semiclassic_lab.models.ledger import AuditRecord, Base, BoundRecord, ConvergenceRecord, Run
from semiclassic_lab.models.report import Outcome
from semiclassic_lab.physics.classical import ParticleEnsemble
from semiclassic_lab.physics.grid import PhaseField, PhaseLattice, SpaceGrid
from semiclassic_lab.physics.initdata import (
    HermiteSpec,
    Target,
    ToeplitzSpec,
    build_hermite,
    build_toeplitz,
    coherent_mixture,
    make_target,
)
from semiclassic_lab.physics.metrics import TestFunctionDictionary
from semiclassic_lab.physics.potentials import PotentialSpec, make_potential
from semiclassic_lab.physics.quantum import PropagationPlan
from semiclassic_lab.physics.states import MixedState
from semiclassic_lab.utils.hashing import config_hash
from semiclassic_lab.utils.snapshots import save_ensemble, save_field, save_state


def common_interval(marks: Sequence[float]) -> Optional[float]:
    """Largest step landing on every mark, from rational approximations of the marks."""
    fractions = [Fraction(m).limit_denominator(10 ** 6) for m in marks if m > 0]
    if not fractions:
        return None
    step = fractions[0]
    for f in fractions[1:]:
        step = Fraction(math.gcd(step.numerator * f.denominator, f.numerator * step.denominator),
                        step.denominator * f.denominator)
    return float(step)


def pick(times: Sequence[float], items: Sequence, wanted: Sequence[float]) -> Dict[float, object]:
    """Recorded items at the wanted times; every wanted time must have been recorded."""
    out = {}
    recorded = np.asarray(times, dtype=float)
    for t in wanted:
        hit = np.flatnonzero(np.abs(recorded - t) <= 1e-9 * max(1.0, abs(t)))
        if not hit.size:
            raise ConfigurationError(f"time {t} is not on the record cadence {list(recorded)}")
        out[float(t)] = items[int(hit[0])]
    return out


class Experiment(ABC):
    """
    Base class for experiments. Subclasses implement `run`; `process` owns
    the ledger session and records the outcome in the same transaction.
    """

    kind: str = ""

    def __init__(self, config: ExperimentConfig, db_path: str):
        self.config = config
        self.db_path = db_path
        self.snapshot_dir: Optional[str] = None
        self.snapshots: List[str] = []

    @property
    def seed(self) -> int:
        seed = self.config.experiment.seed
        return settings.DEFAULT_SEED if seed is None else seed

    @property
    def name(self) -> str:
        return self.config.experiment.name or self.kind

    def process(self, session: Optional[Session] = None) -> Outcome:
        """
        Runs the experiment and stores the outcome in the ledger.
        If an external session is provided, it will be used directly.
        """
        manage_session = session is None

        if manage_session:
            if self.db_path == ":memory:":
                engine = create_engine("sqlite:///:memory:")
            else:
                engine = create_engine(f"sqlite:///{self.db_path}")

            Base.metadata.create_all(engine)
            Session = sessionmaker(bind=engine)
            session = Session()

        try:
            outcome = self.run()
            self.record(outcome, session)
            if manage_session:
                session.commit()
        except Exception as e:
            if manage_session:
                session.rollback()
            raise e
        finally:
            if manage_session:
                session.close()
        return outcome

    @abstractmethod
    def run(self) -> Outcome:
        """
        The measurement itself, implemented by subclasses.
        """
        raise NotImplementedError("Subclasses must implement run method")

    def record(self, outcome: Outcome, session: Session) -> Run:
        run = Run(
            experiment=self.name,
            kind=self.kind,
            config_hash=config_hash(self.config),
            seed=self.seed,
            verdict=outcome.verdict,
        )
        if outcome.convergence is not None:
            for row in outcome.convergence.rows:
                run.convergence.append(ConvergenceRecord(
                    epsilon=row.epsilon, t=row.t,
                    d_p=row.d_P if np.isfinite(row.d_P) else None,
                    flags=";".join(row.flags),
                ))
        if outcome.bounds is not None:
            for entry in outcome.bounds.entries:
                run.bounds.append(BoundRecord(
                    name=entry.name, lhs=entry.lhs, rhs=entry.rhs, passed=entry.passed,
                    terms_json=dict(entry.terms),
                ))
        for report in outcome.reports:
            for check in report.checks:
                run.audits.append(AuditRecord(
                    report=report.name, name=check.name,
                    value=check.value if np.isfinite(check.value) else None,
                    bound=check.bound, passed=check.passed, note=check.note,
                ))
        for name, audit in outcome.audits.items():
            for quantity, drift in audit.drifts.items():
                run.audits.append(AuditRecord(
                    report=f"conservation:{name}", name=quantity, value=drift,
                    bound=audit.tolerances.get(quantity), passed=quantity not in audit.failures,
                ))
        session.add(run)
        session.flush()
        logging.info(f"Recorded run {run.run_id} ({self.kind}) in the ledger")
        return run

    def snapshot(self, name: str, obj) -> None:
        """Write a field, state or ensemble under the snapshot directory, when one is set."""
        if self.snapshot_dir is None or not settings.WRITE_SNAPSHOTS:
            return
        path = os.path.join(self.snapshot_dir, name)
        if isinstance(obj, PhaseField):
            written = save_field(obj, path)
        elif isinstance(obj, MixedState):
            written = save_state(obj, path)
        elif isinstance(obj, ParticleEnsemble):
            written = save_ensemble(obj, path)
        else:
            raise ParameterError(f"no snapshot format for {type(obj).__name__}")
        self.snapshots.extend([written, path + ".json"])

    def get_schema(self):
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        # Get all table definitions in order
        schema = []
        for table in cursor.execute("SELECT sql FROM sqlite_master WHERE type='table' ORDER BY name"):
            schema.append(table[0] + ";")

        conn.close()
        return "\n\n".join(schema)

    # ---------- shared construction from the configuration ----------

    def space_grid(self) -> SpaceGrid:
        g = self.config.grid
        return SpaceGrid(g.dim, g.halfwidth, g.points)

    def potential(self) -> PotentialSpec:
        p = self.config.potential
        return make_potential(self.config.grid.dim, p.name, p.params, [s.dict() for s in p.singular])

    def target(self) -> Optional[Target]:
        initial = self.config.initial
        if initial is None or initial.target is None:
            return None
        return make_target(self.config.grid.dim, initial.target.name, initial.target.params)

    def build_state(self, eps: float) -> MixedState:
        initial = self.config.initial
        if initial is None:
            raise ConfigurationError(f"experiment '{self.kind}' needs an [initial] section")
        grid = self.space_grid()
        if initial.kind == "hermite":
            return build_hermite(HermiteSpec(eps=eps, **initial.params), grid)
        if initial.kind == "toeplitz":
            return build_toeplitz(ToeplitzSpec(eps=eps, target=self.target(), **initial.params), grid)
        return coherent_mixture(grid, eps, initial.centers, initial.weights)

    def comparison_lattice(self, p_halfwidth: Optional[float] = None) -> PhaseLattice:
        lattice = self.config.lattice
        x_half = lattice.x_halfwidth or self.config.grid.halfwidth
        return PhaseLattice.uniform(self.config.grid.dim, x_half, p_halfwidth or lattice.p_halfwidth, lattice.points)

    def dictionary(self, lattice: PhaseLattice) -> TestFunctionDictionary:
        return TestFunctionDictionary(lattice, frequencies=self.config.lattice.frequencies,
                                      scale_fractions=tuple(self.config.lattice.scale_fractions))

    def propagation_plan(self, record_times: Optional[List[float]] = None, dt: Optional[float] = None) -> PropagationPlan:
        sweep = self.config.sweep
        interval = sweep.record_interval
        if interval is None and record_times:
            interval = common_interval(list(record_times) + [sweep.horizon])
        return PropagationPlan(dt=dt or sweep.dt, horizon=sweep.horizon, potential=self.potential(),
                               record_interval=interval)
