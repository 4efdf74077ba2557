import contextlib
import logging
import os
from typing import Dict, Iterator, Optional, Tuple, Type

from semiclassic_lab import __version__
from semiclassic_lab.config import settings
from semiclassic_lab.errors import ConfigurationError
from semiclassic_lab.experiments.assumption_check import AssumptionCheck
from semiclassic_lab.experiments.base_experiment import Experiment
from semiclassic_lab.experiments.conservation_audit import ConservationAuditExperiment
from semiclassic_lab.experiments.convergence_sweep import ConvergenceSweep
from semiclassic_lab.experiments.identity_suite import IdentitySuite
from semiclassic_lab.experiments.residual_scan import ResidualScan
from semiclassic_lab.experiments.rlf_stability import RLFStability
from semiclassic_lab.models.experiment import ExperimentConfig
from semiclassic_lab.models.manifest import LedgerSchema, Manifest
from semiclassic_lab.models.report import Outcome, Report
from semiclassic_lab.physics.initdata import validate_assumptions
from semiclassic_lab.utils.hashing import config_hash
from semiclassic_lab.utils.writers import emit_outputs, write_json

EXPERIMENTS: Dict[str, Type[Experiment]] = {
    cls.kind: cls
    for cls in (ConvergenceSweep, ConservationAuditExperiment, AssumptionCheck, ResidualScan, RLFStability,
                IdentitySuite)
}


@contextlib.contextmanager
def tolerance_overrides(overrides: Dict[str, float]) -> Iterator[None]:
    """Apply [tolerances] from the experiment file to the global settings for one run."""
    saved = {name: getattr(settings, name) for name in overrides}
    try:
        for name, value in overrides.items():
            setattr(settings, name, type(saved[name])(value))
        yield
    finally:
        for name, value in saved.items():
            setattr(settings, name, value)


class Laboratory:
    def __init__(self, config: ExperimentConfig, out_dir: Optional[str] = None, seed_override: Optional[int] = None):
        if seed_override is not None:
            config = config.copy(deep=True)
            config.experiment.seed = seed_override
        self.config = config
        self.out_dir = out_dir or config.experiment.output_dir or settings.OUTPUT_DIR
        self.db_path = os.path.join(self.out_dir, settings.LEDGER_FILENAME)

    def experiment(self) -> Experiment:
        kind = self.config.experiment.kind
        if kind not in EXPERIMENTS:
            raise ConfigurationError(f"no experiment registered for kind '{kind}'")
        return EXPERIMENTS[kind](self.config, self.db_path)

    def run(self) -> Tuple[Outcome, Manifest]:
        """Run the configured experiment, then write the ledger schema, outputs and manifest."""
        experiment = self.experiment()
        experiment.snapshot_dir = os.path.join(self.out_dir, "snapshots")
        logging.info(f"Starting {experiment.kind} '{experiment.name}' (seed {experiment.seed})")
        os.makedirs(self.out_dir, exist_ok=True)
        if os.path.exists(self.db_path):
            os.remove(self.db_path)

        with tolerance_overrides(self.config.tolerances):
            outcome = experiment.process()

        # Create a schema based on the SQLAlchemy schema
        schema = LedgerSchema(
            name=settings.SCHEMA_NAME,
            version=settings.SCHEMA_VERSION,
            description=settings.SCHEMA_DESCRIPTION,
            dialect=settings.SCHEMA_DIALECT,
            schema_data=experiment.get_schema()
        )
        write_json(os.path.join(self.out_dir, "schema.json"), schema.dict(by_alias=True))

        files = emit_outputs(outcome, self.out_dir)
        manifest = Manifest(
            experiment=experiment.name,
            kind=experiment.kind,
            config_hash=config_hash(self.config),
            seed=experiment.seed,
            version=__version__,
            schema_version=settings.SCHEMA_VERSION,
            verdict=outcome.verdict,
            files=sorted(files + ["schema.json", settings.LEDGER_FILENAME]
                         + [os.path.relpath(p, self.out_dir) for p in experiment.snapshots]),
            constants=outcome.constants,
            schema=schema,
        )
        write_json(os.path.join(self.out_dir, "manifest.json"), manifest.dict(by_alias=True))
        logging.info(f"{experiment.kind} finished with verdict {'pass' if outcome.verdict else 'fail'}")
        return outcome, manifest

    def validate(self) -> Report:
        """Configuration, catalog resolution and the initial-data validators, without propagation."""
        experiment = self.experiment()
        report = Report(name="validate")
        potential = experiment.potential()
        report.note(f"potential '{potential.name}' resolved (singular terms: {len(potential.singular)})")
        target = experiment.target()
        if self.config.initial is None:
            report.note("no [initial] section: nothing to validate")
            return report
        with tolerance_overrides(self.config.tolerances):
            for eps in self.config.sweep.epsilons:
                assumptions = validate_assumptions(experiment.build_state(eps), potential, target)
                for check in assumptions.checks:
                    report.add(f"{check.name}[eps={eps:g}]", check.value, bound=check.bound, passed=check.passed,
                               note=check.note)
                report.notes.extend(assumptions.notes)
        logging.info(f"validation {'passed' if report.passed else 'failed'} for {len(self.config.sweep.epsilons)} eps value(s)")
        return report
