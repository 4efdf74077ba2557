import unittest

import numpy as np

from semiclassic_lab.errors import MassMismatchError, ParameterError, StateValidationError
from semiclassic_lab.physics.classical import (
    FlowPlan,
    LeapfrogIntegrator,
    ParticleEnsemble,
    flow,
    measure_preservation_audit,
    push_forward_density,
    rlf_stability,
    sample_initial,
)
from semiclassic_lab.physics.grid import PhaseField, PhaseLattice
from semiclassic_lab.physics.potentials import make_potential


def _gaussian_field(lattice, x0=0.0, p0=0.0, width=0.5):
    x, p = lattice.mesh()
    values = np.exp(-((x - x0) ** 2 + (p - p0) ** 2) / width ** 2)
    return PhaseField(lattice, values / (values.sum() * lattice.cell_volume), "classical")


def _ensemble(x, p):
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    p = np.asarray(p, dtype=float).reshape(-1, 1)
    return ParticleEnsemble(x, p, np.full(x.shape[0], 1.0 / x.shape[0]))


class TestParticleEnsemble(unittest.TestCase):

    def test_validation(self):
        with self.assertRaises(ParameterError):
            ParticleEnsemble(np.zeros((3, 1)), np.zeros((3, 2)), np.full(3, 1 / 3))
        with self.assertRaises(StateValidationError):
            ParticleEnsemble(np.zeros((3, 1)), np.zeros((3, 1)), np.full(3, 0.5))
        with self.assertRaises(StateValidationError):
            ParticleEnsemble(np.full((1, 1), np.nan), np.zeros((1, 1)), np.ones(1))

    def test_defaults(self):
        ensemble = _ensemble([0.0, 1.0], [1.0, 0.0])
        self.assertEqual(ensemble.count, 2)
        self.assertEqual(ensemble.excluded_mass, 0.0)
        self.assertEqual(ensemble.phase_points().shape, (2, 2))


class TestIntegrator(unittest.TestCase):

    def test_harmonic_period(self):
        integrator = LeapfrogIntegrator(lambda x: x)
        steps = 1000
        x, p = integrator.steps(np.array([[1.0]]), np.array([[0.0]]), 2 * np.pi / steps, steps)
        self.assertAlmostEqual(float(x[0, 0]), 1.0, delta=1e-4)
        self.assertAlmostEqual(float(p[0, 0]), 0.0, delta=1e-4)

    def test_plan_validation(self):
        with self.assertRaises(ParameterError):
            FlowPlan(delta=0.0, step=0.01, horizon=1.0)
        plan = FlowPlan(delta=0.1, step=0.01, horizon=1.0, record_interval=0.4)
        np.testing.assert_allclose(plan.record_times(), [0.0, 0.4, 0.8, 1.0])


class TestSampling(unittest.TestCase):

    def setUp(self):
        self.lattice = PhaseLattice.uniform(1, 3.0, 3.0, 64)
        self.density = _gaussian_field(self.lattice, 0.5, -0.25)

    def test_seeded_and_centred(self):
        first = sample_initial(self.density, 4000, seed=1)
        second = sample_initial(self.density, 4000, seed=1)
        np.testing.assert_array_equal(first.x, second.x)
        self.assertFalse(np.array_equal(first.x, sample_initial(self.density, 4000, seed=2).x))
        self.assertAlmostEqual(float(first.x.mean()), 0.5, delta=0.03)
        self.assertAlmostEqual(float(first.p.mean()), -0.25, delta=0.03)

    def test_rejects_bad_densities(self):
        with self.assertRaises(ParameterError):
            sample_initial(self.density, 0)
        with self.assertRaises(MassMismatchError):
            sample_initial(self.density.with_values(0.5 * self.density.values), 100)
        with self.assertRaises(ParameterError):
            sample_initial(self.density.with_values(-self.density.values), 100)
        spike = np.zeros(self.lattice.shape)
        spike[10, 10] = 1.0 / self.lattice.cell_volume
        with self.assertRaises(ParameterError):
            sample_initial(PhaseField(self.lattice, spike, "classical"), 100)
        with self.assertRaises(ParameterError):
            sample_initial(object(), 100)

    def test_push_forward_keeps_mass(self):
        ensemble = sample_initial(self.density, 4000, seed=3, measure=False)
        field_ = push_forward_density(ensemble, self.lattice)
        self.assertAlmostEqual(field_.integral() + field_.metadata["edge_mass"], 1.0, places=10)
        self.assertLess(field_.metadata["edge_mass"], 1e-8)
        moved = ensemble.moved(ensemble.x + 10.0, ensemble.p, 1.0)
        self.assertAlmostEqual(push_forward_density(moved, self.lattice).metadata["outside_mass"], 1.0)

    def test_push_forward_does_not_wrap(self):
        near_edge = _ensemble([2.95, 2.9], [0.0, 0.1])
        field_ = push_forward_density(near_edge, self.lattice, bandwidth=0.5)
        self.assertTrue(np.all(field_.values[:16] == 0.0))
        self.assertGreater(field_.metadata["edge_mass"], 0.1)
        self.assertAlmostEqual(field_.integral() + field_.metadata["edge_mass"], 1.0, places=10)


class TestFlow(unittest.TestCase):

    def test_harmonic_half_period(self):
        ensemble = _ensemble([1.0, -0.5], [0.0, 0.5])
        plan = FlowPlan(delta=0.1, step=0.005, horizon=np.pi, record_interval=np.pi / 2)
        result = flow(ensemble, plan, make_potential(1, "harmonic"))
        self.assertEqual(len(result.times), 3)
        np.testing.assert_allclose(result.final().x, -ensemble.x, atol=1e-4)
        np.testing.assert_allclose(result.final().p, -ensemble.p, atol=1e-4)
        self.assertTrue(result.energy_ok)
        self.assertTrue(result.valid)

    def test_step_is_capped_by_lipschitz(self):
        ensemble = _ensemble([1.0], [0.0])
        result = flow(ensemble, FlowPlan(delta=0.05, step=0.1, horizon=0.2), make_potential(1, "absolute_value"))
        self.assertLessEqual(result.step * result.lipschitz, 0.1 + 1e-12)
        self.assertTrue(result.warnings)

    def test_singular_start_and_dimension(self):
        coulomb = make_potential(1, "zero", singular=[{"charge": 1.0, "center": [0.0]}])
        with self.assertRaises(ParameterError):
            flow(_ensemble([0.01], [0.0]), FlowPlan(delta=0.1, step=0.01, horizon=1.0, r_min=0.05), coulomb)
        with self.assertRaises(ParameterError):
            flow(_ensemble([1.0], [0.0]), FlowPlan(delta=0.1, step=0.01, horizon=1.0), make_potential(2))

    def test_repulsion_keeps_particles_off_the_centre(self):
        coulomb = make_potential(1, "zero", singular=[{"charge": 1.0, "center": [0.0]}])
        ensemble = _ensemble([-2.0, 2.0], [0.5, -0.5])
        result = flow(ensemble, FlowPlan(delta=0.1, step=0.01, horizon=4.0, r_min=0.05), coulomb)
        self.assertTrue(result.valid)
        self.assertTrue(np.all(np.abs(result.final().x) > 1.0))


class _DampedIntegrator(LeapfrogIntegrator):

    def step(self, x, p, h):
        x, p = super().step(x, p, h)
        return x, 0.99 * p


class TestAudits(unittest.TestCase):

    def setUp(self):
        self.lattice = PhaseLattice.uniform(1, 3.0, 3.0, 48)
        self.source = _gaussian_field(self.lattice)
        self.ensemble = sample_initial(self.source, 2000, seed=4, measure=False)

    def test_measure_preservation_harmonic(self):
        potential = make_potential(1, "harmonic")
        result = flow(self.ensemble, FlowPlan(delta=0.1, step=0.01, horizon=1.0), potential)
        report = measure_preservation_audit(result, potential, probes=4, cells_per_axis=4, particles_per_cell=50,
                                            source=self.source, lattice=self.lattice)
        self.assertTrue(report.check("jacobian_simplex").passed)
        self.assertLess(report.check("jacobian_simplex").value, 1e-10)
        self.assertAlmostEqual(report.constants["eta"], 1e-4)
        self.assertGreater(report.constants["C_T"], 0.5)

    def test_measure_preservation_rough(self):
        potential = make_potential(1, "absolute_value")
        result = flow(self.ensemble, FlowPlan(delta=0.1, step=0.01, horizon=0.5), potential)
        report = measure_preservation_audit(result, potential, probes=8, cells_per_axis=4, particles_per_cell=50)
        self.assertTrue(report.check("jacobian_simplex").passed, report.check("jacobian_simplex").value)

    def test_volume_loss_is_caught(self):
        potential = make_potential(1, "harmonic")
        plan = FlowPlan(delta=0.1, step=0.01, horizon=0.2)
        result = flow(self.ensemble, plan, potential)
        damped = _DampedIntegrator(lambda x: x)
        report = measure_preservation_audit(result, potential, probes=4, cells_per_axis=4, particles_per_cell=50,
                                            integrator=damped)
        self.assertFalse(report.check("jacobian_simplex").passed)
        self.assertAlmostEqual(report.check("jacobian_simplex").value, 0.01, places=8)

    def test_stability_needs_two_scales(self):
        lattice = PhaseLattice.uniform(1, 3.0, 3.0, 32)
        ensemble = _ensemble([0.0], [0.0])
        with self.assertRaises(ParameterError):
            rlf_stability(ensemble, make_potential(1, "absolute_value"), [0.1], 1.0, lattice)


if __name__ == "__main__":
    unittest.main()
