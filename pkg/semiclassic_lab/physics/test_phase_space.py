import unittest

import numpy as np

from semiclassic_lab.errors import ParameterError, ResolutionError
from semiclassic_lab.physics.grid import SpaceGrid
from semiclassic_lab.physics.phase_space import (
    cv_regularity_check,
    husimi,
    husimi_at,
    husimi_via_overlap,
    laplacian_coefficient_oracle,
    marginal_report,
    marginals,
    momentum_band,
    momentum_on_lattice,
    moyal_sharp,
    symbol_derivative,
    trace_of_H_squared,
    trace_pairing,
    weyl_symbol,
    wigner,
)
from semiclassic_lab.physics.potentials import make_potential
from semiclassic_lab.physics.states import MixedState, coherent_state, kernel_diagonal, observable_expectation


def _coherent(grid, x0, p0, eps):
    return MixedState.pure(grid, eps, coherent_state(grid, [x0], [p0], eps), label="coherent")


class TestWigner(unittest.TestCase):

    def setUp(self):
        self.grid = SpaceGrid(1, 6.0, 256)
        self.eps = 0.1
        self.state = _coherent(self.grid, 0.5, 0.25, self.eps)

    def test_real_with_unit_mass(self):
        field_ = wigner(self.state)
        self.assertLess(field_.metadata["imag_residue"], 1e-10)
        self.assertAlmostEqual(field_.integral(), 1.0, places=8)

    def test_coherent_peak(self):
        # W = (pi eps)^-1 exp(-(|x - x0|^2 + |p - p0|^2) / eps), sampled off-centre by under a cell
        peak = float(np.max(wigner(self.state).values))
        self.assertAlmostEqual(peak * np.pi * self.eps, 1.0, delta=0.01)

    def test_x_marginal_is_the_density(self):
        field_ = wigner(self.state)
        np.testing.assert_allclose(marginals(field_, "x"), kernel_diagonal(self.state), atol=1e-8)
        with self.assertRaises(ParameterError):
            marginals(field_, "q")

    def test_p_marginal_is_the_momentum_density(self):
        """
        Integrating out x gives (2 pi eps)^-1 |phi_hat(p / eps)|^2 at every lattice
        momentum, odd and even samples alike, across the whole band of the grid.
        """
        field_ = wigner(self.state)
        p = field_.lattice.p_axes[0]
        self.assertEqual(p.size, 2 * self.grid.points)
        self.assertAlmostEqual(-p[0], momentum_band(self.grid, self.eps))
        marginal = marginals(field_, "p")
        np.testing.assert_allclose(marginal, momentum_on_lattice(self.state), atol=1e-8)
        peak = int(np.argmax(marginal))
        self.assertGreater(min(marginal[peak - 1], marginal[peak + 1]) / marginal[peak], 0.9)

    def test_coarse_grid_is_rejected(self):
        coarse = SpaceGrid(1, 6.0, 32)
        with self.assertRaises(ResolutionError):
            wigner(_coherent(coarse, 0.0, 0.0, self.eps))


class TestHusimi(unittest.TestCase):

    def setUp(self):
        self.grid = SpaceGrid(1, 6.0, 256)
        self.eps = 0.1
        self.state = _coherent(self.grid, 0.5, 0.25, self.eps)

    def test_routes_agree_and_stay_positive(self):
        field_ = husimi(self.state)
        self.assertLess(field_.metadata["route_gap"], 1e-6)
        self.assertGreaterEqual(float(np.min(field_.values)), -1e-12)
        self.assertAlmostEqual(field_.integral(), 1.0, places=8)

    def test_overlap_route_matches_probes(self):
        field_ = husimi_via_overlap(self.state)
        i, j = np.unravel_index(np.argmax(field_.values), field_.values.shape)
        center = [[field_.lattice.x_axes[0][i], field_.lattice.p_axes[0][j]]]
        direct = husimi_at(self.state, np.array(center))[0]
        self.assertAlmostEqual(field_.values[i, j], direct, places=8)

    def test_marginals(self):
        report = marginal_report(self.state)
        self.assertTrue(report.passed, [c.name for c in report.failures()])


class TestSymbols(unittest.TestCase):

    def setUp(self):
        self.grid = SpaceGrid(1, 6.0, 256)
        self.eps = 0.1

    def test_trace_pairing(self):
        state = _coherent(self.grid, 0.5, 0.25, self.eps)
        harmonic = make_potential(1, "harmonic")
        self.assertAlmostEqual(trace_pairing(weyl_symbol("identity", self.grid, self.eps), state), 1.0, places=8)
        energy = observable_expectation(state, "H", potential=harmonic)
        paired = trace_pairing(weyl_symbol("hamiltonian", self.grid, self.eps, potential=harmonic), state)
        self.assertAlmostEqual(paired, energy, places=6)
        with self.assertRaises(ParameterError):
            trace_pairing(weyl_symbol("identity", self.grid, self.eps))
        with self.assertRaises(ParameterError):
            weyl_symbol("density", self.grid, self.eps)

    def test_position_momentum_commutator(self):
        x = weyl_symbol("multiplication", self.grid, self.eps, values=self.grid.axis)
        kinetic = weyl_symbol("kinetic", self.grid, self.eps)
        forward, backward = moyal_sharp(x, kinetic), moyal_sharp(kinetic, x)
        # sigma([x, p^2/2]) = i eps p
        commutator = forward.terms[(1,)] - backward.terms[(1,)]
        np.testing.assert_allclose(commutator, 1j * self.eps, atol=1e-12)
        self.assertFalse(forward.warnings)

    def test_symbol_derivative_is_spectral(self):
        x = self.grid.axis
        wave = np.sin(3 * np.pi * x / self.grid.halfwidth)
        np.testing.assert_allclose(symbol_derivative(wave, self.grid, 0),
                                   3 * np.pi / self.grid.halfwidth * np.cos(3 * np.pi * x / self.grid.halfwidth),
                                   atol=1e-11)
        np.testing.assert_allclose(symbol_derivative(x ** 3, self.grid, 0, order=2), 6 * x, atol=1e-8)
        np.testing.assert_allclose(symbol_derivative(np.full(self.grid.shape, 0.5), self.grid, 0), 0.0, atol=1e-14)

    def test_moyal_terms_match_the_closed_form(self):
        x = self.grid.axis
        bump = np.exp(-x ** 2)
        well = weyl_symbol("multiplication", self.grid, self.eps, values=bump)
        product = moyal_sharp(well, weyl_symbol("kinetic", self.grid, self.eps))
        # U # p^2/2 = p^2 U / 2 + i eps U' p / 2 - eps^2 U'' / 8
        np.testing.assert_allclose(product.terms[(1,)], 0.5j * self.eps * (-2 * x * bump), atol=1e-12)
        np.testing.assert_allclose(product.terms[(0,)], bump - self.eps ** 2 / 8 * (4 * x ** 2 - 2) * bump,
                                   atol=1e-12)
        harmonic = weyl_symbol("multiplication", self.grid, self.eps, potential=make_potential(1, "harmonic"))
        product = moyal_sharp(harmonic, weyl_symbol("kinetic", self.grid, self.eps))
        np.testing.assert_allclose(product.terms[(0,)], x ** 2 / 2 - self.eps ** 2 / 8, atol=1e-9)

    def test_truncation_is_reported(self):
        kinetic = weyl_symbol("kinetic", self.grid, self.eps)
        quartic = weyl_symbol("multiplication", self.grid, self.eps, potential=make_potential(1, "quartic"))
        self.assertTrue(moyal_sharp(kinetic, quartic, order=1).warnings)
        self.assertFalse(moyal_sharp(kinetic, quartic, order=2).warnings)

    def test_trace_of_H_squared(self):
        state = _coherent(self.grid, 0.5, 0.25, self.eps)
        harmonic = make_potential(1, "harmonic")
        report = trace_of_H_squared(state, harmonic)
        self.assertTrue(report.passed, report.constants)
        regularity = cv_regularity_check(wigner(state), harmonic)
        self.assertAlmostEqual(regularity.constants["second_moment_integral"] / report.constants["direct"], 1.0,
                               places=5)


class TestLaplacianCoefficient(unittest.TestCase):

    def test_measured_coefficients(self):
        report = laplacian_coefficient_oracle()
        self.assertAlmostEqual(report.constants["c2"], 0.25, delta=0.02)
        self.assertAlmostEqual(report.constants["c1"], 1.0, delta=0.02)


if __name__ == "__main__":
    unittest.main()
