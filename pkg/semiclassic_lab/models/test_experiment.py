import os
import tempfile
import unittest

from pydantic import ValidationError

from semiclassic_lab.models.experiment import ExperimentConfig, SweepSection
from semiclassic_lab.models.manifest import LedgerSchema, Manifest


def _config(**sections):
    data = {"experiment": {"kind": "convergence_sweep", "name": "free"}}
    data.update(sections)
    return ExperimentConfig.parse_obj(data)


class TestExperimentConfig(unittest.TestCase):

    def test_defaults(self):
        """
        A config naming only the experiment gets the default grid, sweep and lattice.
        """
        config = _config()
        self.assertEqual(config.grid.points, 512)
        self.assertEqual(config.potential.name, "zero")
        self.assertIsNone(config.initial)
        self.assertEqual(config.sweep.times(), [1.0])

    def test_grid_points_must_be_power_of_two(self):
        with self.assertRaises(ValidationError):
            _config(grid={"points": 300})
        with self.assertRaises(ValidationError):
            _config(grid={"dim": 4})

    def test_unknown_catalog_names(self):
        with self.assertRaises(ValidationError):
            _config(potential={"name": "morse"})
        with self.assertRaises(ValidationError):
            _config(initial={"kind": "toeplitz", "target": {"name": "sphere"}})

    def test_epsilons_strictly_decreasing(self):
        """
        Sweeps run from coarse to fine; repeated, increasing or out-of-range
        values are configuration errors.
        """
        with self.assertRaises(ValidationError):
            SweepSection(epsilons=[0.1, 0.2])
        with self.assertRaises(ValidationError):
            SweepSection(epsilons=[0.2, 0.2])
        with self.assertRaises(ValidationError):
            SweepSection(epsilons=[1.5, 0.5])
        with self.assertRaises(ValidationError):
            SweepSection(epsilons=[])

    def test_record_times(self):
        sweep = SweepSection(horizon=2.0, record_times=[2.0, 0.5, 0.5])
        self.assertEqual(sweep.times(), [0.5, 2.0])
        with self.assertRaises(ValidationError):
            SweepSection(horizon=1.0, record_times=[1.5])

    def test_initial_data_needs_its_inputs(self):
        with self.assertRaises(ValidationError):
            _config(initial={"kind": "toeplitz"})
        with self.assertRaises(ValidationError):
            _config(initial={"kind": "coherent_mixture"})
        config = _config(initial={"kind": "coherent_mixture", "centers": [[0.0, 1.0]]})
        self.assertEqual(config.initial.centers, [[0.0, 1.0]])

    def test_tolerance_keys(self):
        config = _config(tolerances={"residual_tolerance": 1e-3})
        self.assertEqual(config.tolerances, {"RESIDUAL_TOLERANCE": 1e-3})
        with self.assertRaises(ValidationError):
            _config(tolerances={"no_such_tolerance": 1.0})

    def test_from_toml(self):
        text = (
            '[experiment]\nkind = "identity_suite"\nname = "smoke"\nseed = 7\n\n'
            '[grid]\npoints = 128\nhalfwidth = 6.0\n\n'
            '[potential]\nname = "harmonic"\n\n'
            '[initial]\nkind = "toeplitz"\n\n'
            '[initial.target]\nname = "gaussian"\nparams = { width = 0.5 }\n\n'
            '[sweep]\nepsilons = [0.2, 0.1]\n'
        )
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "smoke.toml")
            with open(path, "w") as f:
                f.write(text)
            config = ExperimentConfig.from_toml(path)
        self.assertEqual(config.experiment.kind, "identity_suite")
        self.assertEqual(config.experiment.seed, 7)
        self.assertEqual(config.grid.points, 128)
        self.assertEqual(config.initial.target.params, {"width": 0.5})
        self.assertEqual(config.sweep.epsilons, [0.2, 0.1])


class TestManifest(unittest.TestCase):

    def test_schema_alias(self):
        """
        The ledger schema is exported under the key "schema".
        """
        schema = LedgerSchema(name="semiclassic_lab", version="1", description="run ledger",
                              dialect="sqlite", schema="CREATE TABLE runs (id INTEGER)")
        manifest = Manifest(experiment="free", kind="convergence_sweep", config_hash="0" * 64, seed=1,
                            version="0.1.0", schema_version="1", ledger_schema=schema)
        exported = manifest.dict(by_alias=True)
        self.assertIn("schema", exported)
        self.assertEqual(exported["schema"]["schema"], "CREATE TABLE runs (id INTEGER)")
        self.assertEqual(manifest.ledger_schema.schema_data, "CREATE TABLE runs (id INTEGER)")


if __name__ == "__main__":
    unittest.main()
