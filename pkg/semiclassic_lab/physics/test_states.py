import os
import unittest

import numpy as np

from semiclassic_lab.errors import ParameterError, StateValidationError
from semiclassic_lab.physics.grid import SpaceGrid
from semiclassic_lab.physics.potentials import make_potential
from semiclassic_lab.physics.states import (
    MixedState,
    band_limited_probes,
    certify_operator_bound,
    coherent_family,
    coherent_matrix_element,
    coherent_state,
    disop_constant,
    momentum_density,
    observable_expectation,
    phase_lattice_points,
    resolution_of_identity,
    trace,
)


class TestCoherentStates(unittest.TestCase):

    def setUp(self):
        self.grid = SpaceGrid(1, 8.0, 256)
        self.eps = 0.1

    def test_unit_norm(self):
        psi = coherent_state(self.grid, [0.5], [0.25], self.eps)
        self.assertAlmostEqual(np.sum(np.abs(psi) ** 2) * self.grid.cell_volume, 1.0, places=12)

    def test_family_matches_single_state(self):
        centers = np.array([[0.5, 0.25], [-1.0, 0.7]])
        family = coherent_family(self.grid, centers, self.eps)
        for row, (x0, p0) in enumerate(centers):
            np.testing.assert_allclose(family[row], coherent_state(self.grid, [x0], [p0], self.eps), atol=1e-13)

    def test_rejects_nonpositive_eps(self):
        with self.assertRaises(ParameterError):
            coherent_state(self.grid, [0.0], [0.0], 0.0)

    def test_expectations(self):
        x0, p0 = 0.5, 0.5
        state = MixedState.pure(self.grid, self.eps, coherent_state(self.grid, [x0], [p0], self.eps))
        self.assertAlmostEqual(trace(state), 1.0, places=10)
        self.assertAlmostEqual(observable_expectation(state, "kinetic"), 0.5 * (p0 ** 2 + self.eps / 2), places=8)
        harmonic = make_potential(1, "harmonic")
        self.assertAlmostEqual(observable_expectation(state, "potential", potential=harmonic),
                               0.5 * (x0 ** 2 + self.eps / 2), places=8)
        with self.assertRaises(ParameterError):
            observable_expectation(state, "potential")

    def test_momentum_density_has_unit_mass(self):
        state = MixedState.pure(self.grid, self.eps, coherent_state(self.grid, [0.0], [0.3], self.eps))
        dp = self.eps * 2 * np.pi / (self.grid.points * self.grid.spacing)
        self.assertAlmostEqual(float(np.sum(momentum_density(state)) * dp), 1.0, places=10)

    def test_husimi_value_at_own_center(self):
        state = MixedState.pure(self.grid, self.eps, coherent_state(self.grid, [0.5], [0.25], self.eps))
        self.assertAlmostEqual(coherent_matrix_element(state, [0.5], [0.25]), 1 / (2 * np.pi * self.eps), places=8)


class TestMixedState(unittest.TestCase):

    def setUp(self):
        self.grid = SpaceGrid(1, 8.0, 256)
        self.eps = 0.1

    def test_from_orthogonal_vectors(self):
        vectors = np.array([coherent_state(self.grid, [c], [0.0], self.eps) for c in (-3.0, 3.0)])
        state = MixedState.from_vectors(self.grid, self.eps, vectors).validate()
        self.assertEqual(state.rank, 2)
        np.testing.assert_allclose(state.weights, [0.5, 0.5], atol=1e-12)

    def test_duplicate_vectors_collapse_to_rank_one(self):
        psi = coherent_state(self.grid, [0.0], [0.0], self.eps)
        state = MixedState.from_vectors(self.grid, self.eps, np.array([psi, psi])).validate()
        self.assertEqual(state.rank, 1)
        self.assertAlmostEqual(state.weights[0], 1.0, places=12)

    def test_validation_errors(self):
        psi = coherent_state(self.grid, [0.0], [0.0], self.eps)
        state = MixedState.pure(self.grid, self.eps, psi)
        with self.assertRaises(StateValidationError):
            state.with_weights([0.9]).validate()
        with self.assertRaises(StateValidationError):
            state.with_modes(2 * state.modes).validate()
        with self.assertRaises(StateValidationError):
            MixedState.from_vectors(self.grid, self.eps, psi[None], weights=np.array([-1.0]))
        with self.assertRaises(ParameterError):
            MixedState(self.grid, self.eps, np.ones(2), state.modes)


class TestOperatorBound(unittest.TestCase):

    def test_pure_state_constant(self):
        grid = SpaceGrid(1, 8.0, 128)
        eps = 0.1
        state = MixedState.pure(grid, eps, coherent_state(grid, [0.0], [0.0], eps))
        self.assertAlmostEqual(disop_constant(state), 1 / eps, places=8)
        report = certify_operator_bound(state, samples=20, seed=3)
        self.assertTrue(report.passed)
        # the centred coherent probe saturates the bound
        self.assertAlmostEqual(report.constants["husimi_sup_probe"], 1 / (2 * np.pi * eps), places=6)

    def test_probes_are_unit_vectors(self):
        grid = SpaceGrid(1, 8.0, 128)
        probes = band_limited_probes(grid, 4, seed=11)
        norms = np.sum(np.abs(probes) ** 2, axis=1) * grid.cell_volume
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_phase_lattice_points_are_cell_centred(self):
        points = phase_lattice_points(1, 1.0, 0.5, 0.5)
        self.assertEqual(points.shape, (8, 2))
        np.testing.assert_allclose(np.unique(points[:, 0]), [-0.75, -0.25, 0.25, 0.75])
        np.testing.assert_allclose(np.unique(points[:, 1]), [-0.25, 0.25])


@unittest.skipUnless(os.environ.get("SEMICLASSIC_SLOW"), "Skipping coherent-state resolution scan")
class TestResolutionOfIdentity(unittest.TestCase):

    def test_band_limited_probes_are_reproduced(self):
        grid = SpaceGrid(1, 8.0, 128)
        report = resolution_of_identity(grid, 0.25, band_limited_probes(grid, 3, seed=5))
        self.assertTrue(report.passed, report.constants)


if __name__ == "__main__":
    unittest.main()
