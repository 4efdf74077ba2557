import unittest

import numpy as np

from semiclassic_lab.errors import AuditFailure, BoundaryEscapeError, ParameterError
from semiclassic_lab.physics.grid import SpaceGrid
from semiclassic_lab.physics.potentials import make_potential
from semiclassic_lab.physics.quantum import (
    PropagationPlan,
    SplitStep,
    Trajectory,
    conservation_audit,
    conservation_tolerance,
    occupied_wavenumber,
    propagate,
    smoothed_density_bound,
)
from semiclassic_lab.physics.states import MixedState, coherent_state, kernel_diagonal


def _coherent(grid, x0, p0, eps):
    return MixedState.pure(grid, eps, coherent_state(grid, [x0], [p0], eps), label="coherent")


class TestPropagationPlan(unittest.TestCase):

    def test_record_times_include_horizon(self):
        plan = PropagationPlan(dt=0.01, horizon=1.0, potential=make_potential(1), record_interval=0.3)
        np.testing.assert_allclose(plan.record_times(), [0.0, 0.3, 0.6, 0.9, 1.0])
        plan = PropagationPlan(dt=0.01, horizon=1.0, potential=make_potential(1))
        np.testing.assert_allclose(plan.record_times(), [0.0, 1.0])

    def test_step_is_capped_by_eps(self):
        plan = PropagationPlan(dt=0.05, horizon=1.0, potential=make_potential(1))
        self.assertAlmostEqual(plan.step_for(0.1), 0.01)
        self.assertAlmostEqual(plan.step_for(1.0), 0.05)

    def test_rejects_bad_plans(self):
        with self.assertRaises(ParameterError):
            PropagationPlan(dt=0.0, horizon=1.0, potential=make_potential(1))
        with self.assertRaises(ParameterError):
            PropagationPlan(dt=0.01, horizon=1.0, potential=make_potential(1), scheme="yoshida")


class TestPropagate(unittest.TestCase):

    def setUp(self):
        self.grid = SpaceGrid(1, 8.0, 256)
        self.eps = 0.1

    def test_free_packet_moves_with_its_momentum(self):
        state = _coherent(self.grid, -1.0, 0.5, self.eps)
        plan = PropagationPlan(dt=0.05, horizon=2.0, potential=make_potential(1), record_interval=1.0)
        trajectory = propagate(state, plan)
        self.assertEqual(trajectory.times, [0.0, 1.0, 2.0])
        final = trajectory.final()
        density = kernel_diagonal(final)
        mean = float(np.sum(self.grid.axis * density) * self.grid.cell_volume)
        self.assertAlmostEqual(mean, 0.0, places=8)
        # free spreading: var(t) = eps (1 + t^2) / 2
        var = float(np.sum(self.grid.axis ** 2 * density) * self.grid.cell_volume) - mean ** 2
        self.assertAlmostEqual(var, self.eps * (1 + 4.0) / 2, places=8)

    def test_records_reach_the_callback(self):
        seen = []
        plan = PropagationPlan(dt=0.05, horizon=0.5, potential=make_potential(1, "harmonic"), record_interval=0.25)
        propagate(_coherent(self.grid, 0.0, 0.0, self.eps), plan, on_record=lambda t, s: seen.append(t))
        self.assertEqual(seen, [0.0, 0.25, 0.5])

    def test_escape_through_the_boundary(self):
        state = _coherent(self.grid, 6.0, 2.0, self.eps)
        plan = PropagationPlan(dt=0.05, horizon=2.0, potential=make_potential(1))
        with self.assertRaises(BoundaryEscapeError):
            propagate(state, plan)

    def test_every_step_keeps_the_norm(self):
        plan = PropagationPlan(dt=0.01, horizon=0.5, potential=make_potential(1, "harmonic"))
        trajectory = propagate(_coherent(self.grid, 1.0, 0.0, self.eps), plan)
        self.assertEqual(trajectory.steps, 50)
        self.assertLess(trajectory.step_drift, 1e-12)

    def test_absorbing_potential_breaks_the_step(self):
        state = _coherent(self.grid, 0.0, 0.0, self.eps)
        absorbing = -1e-3j * np.ones(self.grid.shape)
        with self.assertRaises(AuditFailure) as caught:
            SplitStep(state, absorbing, 0.01)(state.modes, 3)
        self.assertEqual(caught.exception.offender, "step_norm")

    def test_occupied_wavenumber_tracks_momentum(self):
        slow = occupied_wavenumber(_coherent(self.grid, 0.0, 0.0, self.eps))
        fast = occupied_wavenumber(_coherent(self.grid, 0.0, 1.0, self.eps))
        self.assertGreater(fast, slow)


class TestConservationAudit(unittest.TestCase):

    def setUp(self):
        self.grid = SpaceGrid(1, 8.0, 256)
        self.eps = 0.1

    def test_tolerance_scales_with_the_step(self):
        self.assertAlmostEqual(conservation_tolerance(1.0, 0.01) / 1e-8, 1.0)
        self.assertAlmostEqual(conservation_tolerance(2.0, 0.01) / conservation_tolerance(1.0, 0.01), 2.0)
        self.assertEqual(conservation_tolerance(1.0, 1e-9), 1e-12)

    def test_free_run_conserves(self):
        plan = PropagationPlan(dt=0.01, horizon=1.0, potential=make_potential(1), record_interval=0.5)
        audit = conservation_audit(propagate(_coherent(self.grid, 1.0, 0.0, self.eps), plan), smoothing=(1.0,))
        self.assertTrue(audit.passed, audit.failures)
        self.assertLess(audit.drifts["trace"], 1e-10)
        self.assertAlmostEqual(audit.constants["C"], 1 / self.eps, places=8)
        self.assertAlmostEqual(audit.constants["tol_cons"] / 1e-8, 1.0)
        self.assertEqual(len(audit.series["energy"]), 3)

    def test_splitting_error_is_recorded_when_not_strict(self):
        plan = PropagationPlan(dt=0.01, horizon=1.0, potential=make_potential(1, "harmonic"), record_interval=0.5)
        trajectory = propagate(_coherent(self.grid, 1.0, 0.0, self.eps), plan)
        audit = conservation_audit(trajectory, strict=False)
        self.assertFalse(audit.passed)
        self.assertIn("energy", audit.failures)
        self.assertLess(audit.drifts["trace"], 1e-10)
        with self.assertRaises(AuditFailure) as caught:
            conservation_audit(trajectory)
        self.assertIn(caught.exception.offender, audit.failures)

    def test_injected_drift_names_the_offender(self):
        plan = PropagationPlan(dt=0.01, horizon=0.5, potential=make_potential(1), record_interval=0.25)
        trajectory = propagate(_coherent(self.grid, 1.0, 0.0, self.eps), plan)
        trajectory.states[-1] = _coherent(self.grid, 1.0, 0.3, self.eps)
        recorded = conservation_audit(trajectory, strict=False)
        self.assertIn("energy", recorded.failures)
        self.assertIn("H2sum", recorded.failures)
        with self.assertRaises(AuditFailure) as caught:
            conservation_audit(trajectory)
        self.assertIn(caught.exception.offender, recorded.failures)
        self.assertGreater(caught.exception.value, recorded.tolerances[caught.exception.offender])

    def test_empty_trajectory(self):
        with self.assertRaises(ParameterError):
            conservation_audit(Trajectory())

    def test_smoothed_density_bound(self):
        grid = SpaceGrid(1, 8.0, 256)
        report = smoothed_density_bound(_coherent(grid, 0.0, 0.0, 0.1), 1.0)
        self.assertTrue(report.passed)
        with self.assertRaises(ParameterError):
            smoothed_density_bound(_coherent(grid, 0.0, 0.0, 0.1), 0.0)


if __name__ == "__main__":
    unittest.main()
