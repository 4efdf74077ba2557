import os
import tempfile
import unittest

import numpy as np

from semiclassic_lab.models.report import (
    BoundReport,
    ConservationAudit,
    ConvergenceReport,
    ConvergenceRow,
    Outcome,
    PlotSeries,
    Report,
    TightnessProfile,
)
from semiclassic_lab.physics.classical import ParticleEnsemble
from semiclassic_lab.physics.grid import PhaseField, PhaseLattice, SpaceGrid
from semiclassic_lab.physics.states import MixedState, coherent_state
from semiclassic_lab.utils.snapshots import (
    load_ensemble,
    load_field,
    load_state,
    save_ensemble,
    save_field,
    save_state,
)
from semiclassic_lab.utils.writers import emit_outputs, write_csv


class TestSnapshots(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()

    def test_field(self):
        lattice = PhaseLattice.uniform(1, 2.0, 1.0, 16)
        values = np.random.default_rng(0).random(lattice.shape)
        field_ = PhaseField(lattice, values, "husimi", eps=0.1, mass=1.0, metadata={"route_gap": 1e-9})
        save_field(field_, os.path.join(self.tmp, "husimi"))
        loaded = load_field(os.path.join(self.tmp, "husimi"))
        np.testing.assert_array_equal(loaded.values, values)
        np.testing.assert_array_equal(loaded.lattice.p_axes[0], lattice.p_axes[0])
        self.assertEqual(loaded.tag, "husimi")
        self.assertEqual(loaded.metadata["route_gap"], 1e-9)

    def test_state(self):
        grid = SpaceGrid(1, 4.0, 64)
        state = MixedState.pure(grid, 0.2, coherent_state(grid, [0.5], [0.0], 0.2), label="coherent")
        save_state(state, os.path.join(self.tmp, "state"))
        loaded = load_state(os.path.join(self.tmp, "state"))
        np.testing.assert_array_equal(loaded.modes, state.modes)
        self.assertEqual(loaded.grid, grid)
        self.assertEqual(loaded.label, "coherent")

    def test_ensemble(self):
        x = np.linspace(-1, 1, 5)[:, None]
        frozen = np.array([False, True, False, False, False])
        ensemble = ParticleEnsemble(x, -x, np.full(5, 0.2), t=0.5, seed=11, source="test", frozen=frozen)
        save_ensemble(ensemble, os.path.join(self.tmp, "particles"), delta=0.1, h=0.01)
        loaded = load_ensemble(os.path.join(self.tmp, "particles"))
        np.testing.assert_array_equal(loaded.p, -x)
        np.testing.assert_array_equal(loaded.frozen, frozen)
        self.assertEqual(loaded.seed, 11)
        self.assertAlmostEqual(loaded.excluded_mass, 0.2)

    def test_corrupted_payload(self):
        """
        A payload edited after writing no longer matches the digest in its header.
        """
        lattice = PhaseLattice.uniform(1, 2.0, 1.0, 8)
        path = os.path.join(self.tmp, "field")
        save_field(PhaseField(lattice, np.ones(lattice.shape), "classical"), path)
        with open(path + ".bin", "r+b") as f:
            f.write(b"\x00\x01")
        with self.assertRaises(ValueError):
            load_field(path)


class TestWriters(unittest.TestCase):

    def test_floats_keep_every_bit(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_csv(os.path.join(tmp, "table.csv"), ["a", "b"], [[0.1 + 0.2, "x"]])
            with open(path) as f:
                lines = f.read().splitlines()
        self.assertEqual(lines, ["a,b", "0.30000000000000004,x"])

    def test_emit_outputs(self):
        outcome = Outcome(kind="convergence_sweep")
        report = Report(name="identities")
        report.add("unit_trace", 1e-14, 1e-10)
        outcome.add_report(report)
        bounds = BoundReport()
        bounds.add("husimi_gap", 0.01, 0.1)
        outcome.add_bounds(bounds)
        outcome.convergence = ConvergenceReport(rows=[
            ConvergenceRow(epsilon=0.1, t=1.0, d_P=0.02),
            ConvergenceRow(epsilon=0.2, t=1.0, d_P=0.05, flags=["husimi_mass_deficit"]),
        ])
        outcome.audits["eps_0.1"] = ConservationAudit(times=[0.0, 1.0], series={"trace": [1.0, 1.0]})
        outcome.tightness["eps_0.1"] = TightnessProfile(radii=[1.0], x_tail=[0.1], p_tail=[0.1], outside=[0.2])
        outcome.series["sup_dP"] = PlotSeries(x_label="epsilon", y_label="sup_dP", x=[0.2, 0.1], y=[0.05, 0.02])
        with tempfile.TemporaryDirectory() as tmp:
            written = emit_outputs(outcome, tmp)
            with open(os.path.join(tmp, "convergence.csv")) as f:
                rows = f.read().splitlines()
        self.assertEqual(sorted(written), sorted([
            "convergence.csv", "checks.csv", "bounds.json", "conservation_eps_0.1.csv",
            "tightness_eps_0.1.csv", os.path.join("plots", "sup_dP.csv"), "report.json",
        ]))
        # coarse epsilon first
        self.assertEqual(rows[1], "0.2,1.0,0.05,husimi_mass_deficit")
        self.assertTrue(outcome.verdict)


if __name__ == "__main__":
    unittest.main()
