import unittest

import numpy as np

from semiclassic_lab.errors import ParameterError
from semiclassic_lab.physics.grid import (
    GaussianKernel,
    PhaseField,
    PhaseLattice,
    SpaceGrid,
    boundary_mass,
    continuous_spectrum,
    forward_transform,
    gaussian_smooth,
    inverse_transform,
    kernel_on_grid,
    quadrature,
    spectral_derivative,
)


class TestSpaceGrid(unittest.TestCase):

    def test_axis_is_cell_centred(self):
        grid = SpaceGrid(1, 8.0, 256)
        self.assertAlmostEqual(grid.axis[0], -8.0 + grid.spacing / 2)
        np.testing.assert_allclose(grid.axis, -grid.axis[::-1], atol=1e-14)
        self.assertFalse(np.any(grid.axis == 0.0))

    def test_rejects_bad_shapes(self):
        with self.assertRaises(ParameterError):
            SpaceGrid(1, 8.0, 100)
        with self.assertRaises(ParameterError):
            SpaceGrid(0, 8.0, 64)
        with self.assertRaises(ParameterError):
            SpaceGrid(1, -1.0, 64)

    def test_fourier_pair_is_unitary(self):
        grid = SpaceGrid(2, 4.0, 32)
        rng = np.random.default_rng(7)
        values = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        hat = forward_transform(values, grid)
        self.assertAlmostEqual(np.sum(np.abs(hat) ** 2), np.sum(np.abs(values) ** 2), places=8)
        np.testing.assert_allclose(inverse_transform(hat, grid), values, atol=1e-12)

    def test_continuous_spectrum_of_gaussian(self):
        grid = SpaceGrid(1, 8.0, 256)
        spectrum = continuous_spectrum(np.exp(-grid.axis ** 2 / 2), grid)
        np.testing.assert_allclose(spectrum, np.exp(-grid.wavenumbers ** 2 / 2), atol=1e-10)

    def test_spectral_derivative(self):
        grid = SpaceGrid(1, 8.0, 256)
        x = grid.axis
        derivative = spectral_derivative(np.exp(-x ** 2), grid, axis=0)
        np.testing.assert_allclose(derivative.real, -2 * x * np.exp(-x ** 2), atol=1e-9)


class TestKernels(unittest.TestCase):

    def test_kernel_has_unit_mass(self):
        grid = SpaceGrid(1, 8.0, 256)
        kernel = GaussianKernel(0.1)
        self.assertTrue(kernel.resolved_by(grid))
        self.assertAlmostEqual(quadrature(kernel_on_grid(kernel, grid), grid), 1.0, places=10)

    def test_smoothing_keeps_constants_and_mass(self):
        grid = SpaceGrid(1, 8.0, 256)
        kernel = GaussianKernel(0.2)
        np.testing.assert_allclose(gaussian_smooth(np.ones(grid.shape), grid, kernel).real, 1.0, atol=1e-12)
        bump = np.exp(-grid.axis ** 2)
        smoothed = gaussian_smooth(bump, grid, kernel).real
        self.assertAlmostEqual(quadrature(smoothed, grid), quadrature(bump, grid), places=10)

    def test_boundary_mass_of_centred_density(self):
        grid = SpaceGrid(1, 8.0, 256)
        density = np.exp(-grid.axis ** 2) / np.sqrt(np.pi)
        self.assertLess(boundary_mass(density, grid), 1e-12)


class TestPhaseLattice(unittest.TestCase):

    def test_uniform_lattice(self):
        lattice = PhaseLattice.uniform(1, 4.0, 2.0, 40)
        self.assertEqual(lattice.shape, (40, 40))
        self.assertAlmostEqual(lattice.spacings[0], 0.2)
        self.assertAlmostEqual(lattice.spacings[1], 0.1)
        self.assertAlmostEqual(lattice.cell_volume, 0.02)
        self.assertTrue(lattice.same_as(PhaseLattice.uniform(1, 4.0, 2.0, 40)))
        self.assertFalse(lattice.same_as(PhaseLattice.uniform(1, 4.0, 3.0, 40)))

    def test_field_shape_is_checked(self):
        lattice = PhaseLattice.uniform(1, 1.0, 1.0, 8)
        with self.assertRaises(ParameterError):
            PhaseField(lattice, np.zeros((8, 9)), "classical")

    def test_retagged_field_drops_mass(self):
        lattice = PhaseLattice.uniform(1, 1.0, 1.0, 8)
        field_ = PhaseField(lattice, np.full((8, 8), 0.25), "husimi", mass=1.0)
        self.assertAlmostEqual(field_.check_mass(), 1.0)
        self.assertIsNone(field_.with_values(field_.values, tag="classical").mass)
        self.assertEqual(field_.with_values(field_.values).mass, 1.0)


if __name__ == "__main__":
    unittest.main()
