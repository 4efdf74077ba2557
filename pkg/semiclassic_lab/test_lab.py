import json
import os
import tempfile
import unittest

from semiclassic_lab.__main__ import EXIT_FAIL, EXIT_PASS, parse_args, run
from semiclassic_lab.config import settings
from semiclassic_lab.lab import EXPERIMENTS, Laboratory, tolerance_overrides
from semiclassic_lab.models.experiment import ExperimentConfig

AUDIT_TOML = """
[experiment]
kind = "conservation_audit"
name = "free_audit"
seed = 3

[grid]
points = 128
halfwidth = 6.0

[potential]
name = "zero"

[initial]
kind = "coherent_mixture"
centers = [[1.0, 0.0]]

[sweep]
epsilons = [0.2]
horizon = 1.0
record_interval = 0.5
dt = 0.01
dt_halvings = 1
"""


class TestRegistry(unittest.TestCase):

    def test_every_kind_is_registered(self):
        kinds = {"convergence_sweep", "conservation_audit", "assumption_check", "residual_scan", "rlf_stability",
                 "identity_suite"}
        self.assertEqual(set(EXPERIMENTS), kinds)
        for kind, cls in EXPERIMENTS.items():
            self.assertEqual(cls.kind, kind)

    def test_tolerance_overrides_are_scoped(self):
        before = settings.RESIDUAL_TOLERANCE
        with tolerance_overrides({"RESIDUAL_TOLERANCE": 0.5}):
            self.assertEqual(settings.RESIDUAL_TOLERANCE, 0.5)
        self.assertEqual(settings.RESIDUAL_TOLERANCE, before)

    def test_seed_override(self):
        config = ExperimentConfig.parse_obj({"experiment": {"kind": "identity_suite", "seed": 1}})
        laboratory = Laboratory(config, out_dir="unused", seed_override=9)
        self.assertEqual(laboratory.experiment().seed, 9)
        self.assertEqual(config.experiment.seed, 1)


class TestCommandLine(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name
        self.config_path = os.path.join(self.tmp, "audit.toml")
        with open(self.config_path, "w") as f:
            f.write(AUDIT_TOML)

    def tearDown(self):
        self._tmp.cleanup()

    def test_parse_args(self):
        args = parse_args(["run", "--config", "a.toml", "--seed-override", "4"])
        self.assertEqual((args.command, args.config, args.seed_override, args.out_dir), ("run", "a.toml", 4, None))
        with self.assertRaises(SystemExit):
            parse_args(["compile", "--config", "a.toml"])

    def test_validate_exit_codes(self):
        """
        A pure state at eps = 0.2 has rho <= 5 eps; lowering the admissible
        bound below that through [tolerances] turns validation into a failure.
        """
        self.assertEqual(run(["validate", "--config", self.config_path]), EXIT_PASS)
        strict = os.path.join(self.tmp, "strict.toml")
        with open(strict, "w") as f:
            f.write(AUDIT_TOML + "\n[tolerances]\ndisop_bound = 1.0\n")
        self.assertEqual(run(["validate", "--config", strict]), EXIT_FAIL)

    def test_run_writes_outputs(self):
        out_dir = os.path.join(self.tmp, "out")
        self.assertEqual(run(["run", "--config", self.config_path, "--out-dir", out_dir]), EXIT_PASS)
        with open(os.path.join(out_dir, "manifest.json")) as f:
            manifest = json.load(f)
        self.assertEqual(manifest["kind"], "conservation_audit")
        self.assertEqual(manifest["seed"], 3)
        self.assertTrue(manifest["verdict"])
        self.assertIn("CREATE TABLE runs", manifest["schema"]["schema"])
        for name in manifest["files"]:
            self.assertTrue(os.path.exists(os.path.join(out_dir, name)), name)
        self.assertIn("conservation_eps=0.2.csv", manifest["files"])


if __name__ == "__main__":
    unittest.main()
