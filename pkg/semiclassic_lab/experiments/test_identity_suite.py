import os
import tempfile
import unittest

import numpy as np
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from semiclassic_lab.errors import ConfigurationError, ParameterError
from semiclassic_lab.experiments.base_experiment import Experiment, common_interval, pick
from semiclassic_lab.experiments.identity_suite import hermite_annulus, identity_checks
from semiclassic_lab.models import ledger
from semiclassic_lab.models.experiment import ExperimentConfig
from semiclassic_lab.models.report import BoundReport, ConvergenceReport, ConvergenceRow, Outcome, Report
from semiclassic_lab.physics.grid import PhaseField, PhaseLattice, SpaceGrid
from semiclassic_lab.physics.potentials import make_potential
from semiclassic_lab.physics.states import MixedState, coherent_state


class TestCadence(unittest.TestCase):

    def test_common_interval(self):
        self.assertAlmostEqual(common_interval([0.3, 1.0]), 0.1)
        self.assertAlmostEqual(common_interval([0.25, 0.5, 1.0]), 0.25)
        self.assertAlmostEqual(common_interval([0.0, 2.0 / 3.0, 1.0]), 1.0 / 3.0)
        self.assertIsNone(common_interval([0.0]))

    def test_pick(self):
        picked = pick([0.0, 0.5, 1.0], ["a", "b", "c"], [1.0, 0.5])
        self.assertEqual(picked, {1.0: "c", 0.5: "b"})
        with self.assertRaises(ConfigurationError):
            pick([0.0, 0.5, 1.0], ["a", "b", "c"], [0.75])


class TestIdentityChecks(unittest.TestCase):

    def setUp(self):
        grid = SpaceGrid(1, 6.0, 256)
        self.eps = 0.1
        self.state = MixedState.pure(grid, self.eps, coherent_state(grid, [0.5], [0.25], self.eps), label="coherent")
        self.harmonic = make_potential(1, "harmonic")

    def test_coherent_state_passes(self):
        report = identity_checks(self.state, self.harmonic)
        self.assertTrue(report.passed, [(c.name, c.value) for c in report.failures()])
        self.assertTrue(report.check("husimi_positivity").passed)

    def test_inflated_weights_fail_the_trace_checks(self):
        """
        A state whose weights sum to 1.2 breaks the trace and mass checks
        while every transform identity still holds.
        """
        report = identity_checks(self.state.with_weights(np.array([1.2])), self.harmonic)
        failed = {c.name for c in report.failures()}
        self.assertFalse(report.passed)
        self.assertIn("unit_trace", failed)
        self.assertIn("wigner_unit_mass", failed)
        self.assertNotIn("husimi_routes", failed)
        self.assertNotIn("trace_pairing_identity", failed)


class TestHermiteAnnulus(unittest.TestCase):

    def setUp(self):
        self.grid = SpaceGrid(1, 4.0, 256)

    def test_threshold_is_set_by_the_coarser_eps(self):
        report = hermite_annulus((0.08, 0.04), grid=self.grid)
        self.assertTrue(report.passed, report.constants)
        self.assertEqual(report.constants["annulus_threshold"], report.constants["annulus_mass[eps=0.08]"])
        self.assertGreaterEqual(report.constants["annulus_mass[eps=0.04]"], report.constants["annulus_threshold"])

    def test_coarsening_eps_fails(self):
        report = hermite_annulus((0.04, 0.08), grid=self.grid)
        self.assertFalse(report.check("annulus_improves").passed)


class _FixedOutcome(Experiment):
    kind = "identity_suite"

    def run(self) -> Outcome:
        outcome = Outcome(kind=self.kind)
        report = Report(name="fixed")
        report.add("unit_trace", 0.0, bound=1e-10)
        report.add("wigner_unit_mass", 1.0, bound=1e-8)
        outcome.add_report(report)
        bounds = BoundReport()
        bounds.add("husimi_gap", 0.01, 0.1, terms={"Ceps": 0.1})
        outcome.add_bounds(bounds)
        outcome.convergence = ConvergenceReport(rows=[
            ConvergenceRow(epsilon=0.1, t=1.0, d_P=0.02),
            ConvergenceRow(epsilon=0.05, t=1.0, d_P=float("nan"), flags=["aborted"]),
        ])
        return outcome


class TestSnapshotHook(unittest.TestCase):

    def test_snapshots_only_with_a_directory(self):
        config = ExperimentConfig.parse_obj({"experiment": {"kind": "identity_suite"}})
        experiment = _FixedOutcome(config, db_path=":memory:")
        lattice = PhaseLattice.uniform(1, 1.0, 1.0, 8)
        field_ = PhaseField(lattice, np.ones(lattice.shape), "classical")
        experiment.snapshot("skipped", field_)
        self.assertEqual(experiment.snapshots, [])
        with tempfile.TemporaryDirectory() as tmp:
            experiment.snapshot_dir = tmp
            experiment.snapshot("density", field_)
            self.assertTrue(all(os.path.exists(p) for p in experiment.snapshots))
            with self.assertRaises(ParameterError):
                experiment.snapshot("other", object())
        self.assertEqual([os.path.basename(p) for p in experiment.snapshots], ["density.bin", "density.json"])


class TestLedger(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        """
        Runs a fixed experiment once into an in-memory SQLite ledger.
        """
        cls.engine = create_engine("sqlite:///:memory:")
        ledger.Base.metadata.create_all(cls.engine)
        Session = sessionmaker(bind=cls.engine)
        cls.session = Session()
        config = ExperimentConfig.parse_obj({"experiment": {"kind": "identity_suite", "name": "fixed", "seed": 5}})
        cls.outcome = _FixedOutcome(config, db_path=":memory:").process(session=cls.session)
        cls.run_row = cls.session.query(ledger.Run).first()

    def test_run_row(self):
        self.assertEqual(self.run_row.experiment, "fixed")
        self.assertEqual(self.run_row.seed, 5)
        self.assertFalse(self.run_row.verdict)
        self.assertEqual(len(self.run_row.config_hash), 64)

    def test_child_rows(self):
        self.assertEqual(len(self.run_row.convergence), 2)
        aborted = [row for row in self.run_row.convergence if row.flags == "aborted"][0]
        self.assertIsNone(aborted.d_p)
        self.assertEqual(self.run_row.bounds[0].terms_json, {"Ceps": 0.1})
        failed = [a.name for a in self.run_row.audits if not a.passed]
        self.assertEqual(failed, ["wigner_unit_mass"])

    @classmethod
    def tearDownClass(cls):
        """Closes the session."""
        cls.session.close()


if __name__ == "__main__":
    unittest.main()
