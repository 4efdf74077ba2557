import unittest

import numpy as np

from semiclassic_lab.errors import ConfigurationError, ParameterError
from semiclassic_lab.physics.grid import PhaseLattice, SpaceGrid
from semiclassic_lab.physics.initdata import (
    HermiteSpec,
    ToeplitzSpec,
    build_hermite,
    build_toeplitz,
    coherent_mixture,
    hermite_functions,
    make_target,
    moment_growth,
    toeplitz_bound_report,
    validate_assumptions,
)
from semiclassic_lab.physics.potentials import make_potential
from semiclassic_lab.physics.states import MixedState, coherent_state


class TestTargets(unittest.TestCase):

    def test_tabulated_mass(self):
        lattice = PhaseLattice.uniform(1, 4.0, 4.0, 64)
        gaussian = make_target(1, "gaussian", {"width": 0.5, "center": [0.5, -0.5]})
        self.assertAlmostEqual(gaussian.tabulate(lattice).integral(), 1.0, places=10)
        self.assertAlmostEqual(gaussian.sup(), 1 / (2 * np.pi * 0.25))
        box = make_target(1, "uniform_box", {"halfwidth": 1.0})
        self.assertAlmostEqual(box.tabulate(lattice).integral(), 1.0, places=12)
        annulus = make_target(1, "annulus", {"radius_sq": 1.0, "width": 0.1})
        fine = PhaseLattice.uniform(1, 2.0, 2.0, 256)
        self.assertAlmostEqual(annulus.tabulate(fine).integral(), 1.0, delta=1e-3)

    def test_catalog_errors(self):
        with self.assertRaises(ConfigurationError):
            make_target(1, "no_such_target")
        with self.assertRaises(ConfigurationError):
            make_target(1, "gaussian", {"sigma": 1.0})
        with self.assertRaises(ParameterError):
            make_target(2, "annulus")

    def test_moment_growth_separates_heavy_tails(self):
        inner, outer = moment_growth(make_target(1, "gaussian"))
        self.assertLess((outer - inner) / inner, 1e-6)
        inner, outer = moment_growth(make_target(1, "heavy_tail"))
        self.assertGreater((outer - inner) / inner, 0.5)


class TestHermite(unittest.TestCase):

    def test_orthonormal_and_ground_state(self):
        grid = SpaceGrid(1, 6.0, 512)
        eps = 0.05
        modes = hermite_functions(grid, eps, range(21))
        gram = modes @ modes.T * grid.spacing
        np.testing.assert_allclose(gram, np.eye(21), atol=1e-10)
        np.testing.assert_allclose(modes[0], coherent_state(grid, [0.0], [0.0], eps).real, atol=1e-12)

    def test_high_order_does_not_underflow(self):
        grid = SpaceGrid(1, 6.0, 2048)
        mode = hermite_functions(grid, 0.01, [200])[0]
        self.assertTrue(np.all(np.isfinite(mode)))
        self.assertAlmostEqual(float(np.sum(mode ** 2) * grid.spacing), 1.0, places=8)

    def test_band_weights(self):
        spec = HermiteSpec(eps=0.01, rule="uniform_band", radius_sq=1.0, width=0.06)
        j, mu = spec.weights()
        np.testing.assert_array_equal(j, np.arange(47, 53))
        np.testing.assert_allclose(mu, np.full(6, 1 / 6))
        constants = spec.constants()
        self.assertAlmostEqual(constants["weight_constant"], 100 / 6)
        self.assertEqual(constants["top_index"], 52.0)
        smoothed = HermiteSpec(eps=0.01, rule="smoothed_band", radius_sq=1.0, width=0.05)
        self.assertAlmostEqual(float(smoothed.weights()[1].sum()), 1.0, places=12)

    def test_spec_errors(self):
        with self.assertRaises(ParameterError):
            HermiteSpec(eps=1.5)
        with self.assertRaises(ParameterError):
            HermiteSpec(eps=0.01, radius_sq=1.0, width=0.001).weights()

    def test_build(self):
        grid = SpaceGrid(1, 4.0, 256)
        state = build_hermite(HermiteSpec(eps=0.04, rule="single", index=2), grid)
        self.assertEqual(state.rank, 1)
        with self.assertRaises(ParameterError):
            build_hermite(HermiteSpec(eps=0.9, rule="single", index=10), grid)


class TestToeplitz(unittest.TestCase):

    def test_lattice_spacings(self):
        spec = ToeplitzSpec(eps=0.04, target=make_target(1, "gaussian"))
        dq, dw = spec.spacings()
        self.assertAlmostEqual(dq, 0.1)
        self.assertAlmostEqual(dw, 0.1)
        with self.assertRaises(ParameterError):
            ToeplitzSpec(eps=0.04, target=make_target(1, "gaussian"), alpha=1.0)

    def test_build_and_bound(self):
        grid = SpaceGrid(1, 4.0, 128)
        spec = ToeplitzSpec(eps=0.04, target=make_target(1, "gaussian", {"width": 0.3}))
        state = build_toeplitz(spec, grid)
        self.assertAlmostEqual(float(np.sum(state.weights)), 1.0, places=12)
        report = toeplitz_bound_report(spec, state)
        self.assertTrue(report.passed, report.constants)


class TestMixturesAndAssumptions(unittest.TestCase):

    def test_coherent_mixture(self):
        grid = SpaceGrid(1, 6.0, 256)
        state = coherent_mixture(grid, 0.1, [[-2.0, 0.0], [2.0, 0.0]])
        self.assertEqual(state.rank, 2)
        with self.assertRaises(ParameterError):
            coherent_mixture(grid, 0.1, [[-2.0, 0.0], [2.0, 0.0]], weights=[0.5, 0.6])

    def test_validate_assumptions(self):
        grid = SpaceGrid(1, 6.0, 128)
        eps = 0.2
        state = MixedState.pure(grid, eps, coherent_state(grid, [0.5], [0.25], eps))
        harmonic = make_potential(1, "harmonic")
        target = make_target(1, "gaussian", {"width": np.sqrt(eps / 2), "center": [0.5, 0.25]})
        report = validate_assumptions(state, harmonic, target)
        self.assertTrue(report.passed, [c.name for c in report.failures()])
        self.assertIn("dP_to_target", report.constants)
        self.assertFalse(validate_assumptions(state, harmonic, disop_bound=1.0).passed)


if __name__ == "__main__":
    unittest.main()
