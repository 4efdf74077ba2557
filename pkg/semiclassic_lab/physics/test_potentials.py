import unittest

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import erf

from semiclassic_lab.errors import ConfigurationError, ParameterError, SingularityError
from semiclassic_lab.physics.grid import SpaceGrid
from semiclassic_lab.physics.potentials import (
    SingularTerm,
    dist_to_singular,
    eval_gradient,
    eval_potential,
    laplacian,
    make_potential,
    mollified_gradient,
    potential_on_grid,
    validate_potential,
)


class TestCatalog(unittest.TestCase):

    def test_unknown_name_and_bad_parameters(self):
        with self.assertRaises(ConfigurationError):
            make_potential(1, "no_such_potential")
        with self.assertRaises(ConfigurationError):
            make_potential(1, "harmonic", {"frequency": 2.0})

    def test_absolute_value_kink_takes_midpoint(self):
        spec = make_potential(1, "absolute_value", {"a": 2.0})
        self.assertAlmostEqual(eval_potential(spec, -1.5), 3.0)
        grad, flags = eval_gradient(spec, np.array([-1.0, 0.0, 1.0]), return_flags=True)
        np.testing.assert_allclose(grad, [-2.0, 0.0, 2.0])
        np.testing.assert_array_equal(flags, [False, True, False])

    def test_sawtooth_shape(self):
        spec = make_potential(1, "sawtooth", {"slope": 1.0, "segment": 2.0})
        self.assertAlmostEqual(eval_potential(spec, 0.0), 0.0)
        self.assertAlmostEqual(eval_potential(spec, 1.0), 1.0)
        self.assertAlmostEqual(eval_potential(spec, -1.0), -1.0)
        self.assertAlmostEqual(eval_potential(spec, 3.0), -1.0)

    def test_smooth_laplacians(self):
        x = np.array([[0.3, -0.2]])
        self.assertAlmostEqual(laplacian(make_potential(2, "harmonic", {"omega": 2.0}), x)[0], 8.0)
        quartic = make_potential(1, "quartic", {"a": 1.0})
        self.assertAlmostEqual(laplacian(quartic, 0.5), 12 * 0.25)
        with self.assertRaises(ParameterError):
            laplacian(make_potential(1, "absolute_value"), 0.5)


class TestSingularPart(unittest.TestCase):

    def test_terms_must_be_repulsive(self):
        with self.assertRaises(ParameterError):
            SingularTerm(charge=-1.0, center=(0.0,))
        with self.assertRaises(ParameterError):
            SingularTerm(charge=1.0)

    def test_evaluation_on_the_set_raises(self):
        spec = make_potential(1, "zero", singular=[{"charge": 1.0, "center": [0.0]}])
        with self.assertRaises(SingularityError):
            eval_potential(spec, 0.0)
        self.assertAlmostEqual(eval_potential(spec, 2.0), 0.5)
        self.assertAlmostEqual(dist_to_singular(spec.singular_set, np.array([-3.0])), 3.0)

    def test_pair_distance_to_diagonal(self):
        spec = make_potential(6, "zero", singular=[{"charge": 1.0, "pair": [0, 1]}])
        x = np.array([1.0, 0.0, 0.0, -1.0, 0.0, 0.0])
        self.assertAlmostEqual(dist_to_singular(spec.singular_set, x), 2.0 / np.sqrt(2.0))
        self.assertAlmostEqual(spec.singular_set.lower_constant, 1.0 / np.sqrt(2.0))

    def test_cell_centred_grid_avoids_centre(self):
        spec = make_potential(1, "zero", singular=[{"charge": 1.0, "center": [0.0]}])
        values = potential_on_grid(spec, SpaceGrid(1, 4.0, 64))
        self.assertTrue(np.all(np.isfinite(values)))
        self.assertAlmostEqual(float(values.max()), 1.0 / (4.0 / 64))


class TestMollification(unittest.TestCase):

    def test_absolute_value_mollifies_to_erf(self):
        delta = 0.3
        spec = make_potential(1, "absolute_value")
        gradient = mollified_gradient(spec, delta, halfwidth=4.0)
        x = np.linspace(-2, 2, 41)
        np.testing.assert_allclose(gradient(x), erf(x / delta), atol=1e-14)
        # direct quadrature of E[sign(x + delta xi)], xi ~ exp(-xi^2) / sqrt(pi)
        xi = np.linspace(-8, 8, 200001)
        weight = np.exp(-xi ** 2) / np.sqrt(np.pi)
        direct = [trapezoid(np.sign(v + delta * xi) * weight, xi) for v in (-0.2, 0.1, 0.5)]
        np.testing.assert_allclose(gradient(np.array([-0.2, 0.1, 0.5])), direct, atol=1e-4)

    def test_lipschitz_estimate(self):
        delta = 0.2
        gradient = mollified_gradient(make_potential(1, "absolute_value"), delta, halfwidth=4.0)
        self.assertAlmostEqual(gradient.lipschitz, 2 / (delta * np.sqrt(np.pi)), delta=0.02 * 2 / (delta * np.sqrt(np.pi)))

    def test_rejects_nonpositive_scale(self):
        with self.assertRaises(ParameterError):
            mollified_gradient(make_potential(1, "zero"), 0.0)


class TestValidatePotential(unittest.TestCase):

    def test_absolute_value_constants(self):
        report = validate_potential(make_potential(1, "absolute_value"), halfwidth=4.0)
        self.assertAlmostEqual(report.constants["ub_sup"], 4.0)
        self.assertAlmostEqual(report.constants["lipschitz"], 1.0)
        self.assertAlmostEqual(report.constants["gradient_tv"], 2.0, places=6)


if __name__ == "__main__":
    unittest.main()
