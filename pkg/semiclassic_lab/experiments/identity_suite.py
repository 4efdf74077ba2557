import logging
from typing import List, Optional, Sequence

import numpy as np

from semiclassic_lab.config import settings
from semiclassic_lab.errors import TransformConsistencyError
from semiclassic_lab.experiments.base_experiment import Experiment
from semiclassic_lab.models.report import Outcome, Report
from semiclassic_lab.physics.grid import SpaceGrid
from semiclassic_lab.physics.initdata import HermiteSpec, build_hermite
from semiclassic_lab.physics.phase_space import (
    check_wigner_resolution,
    cv_regularity_check,
    husimi,
    husimi_via_overlap,
    laplacian_coefficient_oracle,
    marginal_report,
    trace_of_H_squared,
    trace_pairing,
    weyl_symbol,
    wigner,
)
from semiclassic_lab.physics.potentials import PotentialSpec
from semiclassic_lab.physics.states import (
    MixedState,
    band_limited_probes,
    certify_operator_bound,
    coherent_state,
    observable_expectation,
    resolution_of_identity,
)

_PAIRING_TOLERANCE = 1e-6
_ANNULUS_HALFWIDTH = 0.2


def identity_checks(state: MixedState, potential: PotentialSpec, name: str = "identities") -> Report:
    """
    Realness and mass of the Wigner transform, positivity and route
    agreement of the Husimi transform, the marginal identities and the
    trace pairing of the identity and of H. Failures are recorded, not
    raised, so a corrupted state fails exactly the checks it breaks.
    """
    report = Report(name=name)
    for check in check_wigner_resolution(state).checks:
        report.checks.append(check)
        report.passed = report.passed and check.passed
    try:
        wigner_field = wigner(state, check=False)
        report.add("wigner_realness", wigner_field.metadata["imag_residue"], bound=settings.WIGNER_REALNESS_TOLERANCE)
    except TransformConsistencyError as e:
        report.add("wigner_realness", e.discrepancy, passed=False, note=str(e))
        return report
    report.add("unit_trace", abs(float(np.sum(state.weights)) - 1.0), bound=settings.TRACE_TOLERANCE)
    report.add("wigner_unit_mass", abs(wigner_field.integral() - 1.0), bound=settings.MARGINAL_TOLERANCE)

    try:
        husimi_field = husimi(state, wigner_field)
        report.add("husimi_routes", husimi_field.metadata["route_gap"], bound=settings.HUSIMI_ROUTE_TOLERANCE)
    except TransformConsistencyError as e:
        report.add("husimi_routes", e.discrepancy, passed=False, note=str(e))
        return report
    report.add("husimi_positivity", -float(np.min(husimi_field.values)), bound=settings.HUSIMI_POSITIVITY_TOLERANCE)
    for check in marginal_report(state, wigner_field, husimi_field).checks:
        report.checks.append(check)
        report.passed = report.passed and check.passed

    identity = trace_pairing(weyl_symbol("identity", state.grid, state.eps), wigner_field=wigner_field)
    report.add("trace_pairing_identity", abs(identity - float(np.sum(state.weights))), bound=_PAIRING_TOLERANCE)
    energy = observable_expectation(state, "H", potential=potential)
    paired = trace_pairing(weyl_symbol("hamiltonian", state.grid, state.eps, potential=potential),
                           wigner_field=wigner_field)
    report.add("trace_pairing_hamiltonian", abs(paired - energy) / max(1.0, abs(energy)), bound=_PAIRING_TOLERANCE)
    return report


def annulus_mass(state: MixedState, radius_sq: float, halfwidth: float = _ANNULUS_HALFWIDTH) -> float:
    """Share of the Husimi mass in |x^2 + p^2 - radius_sq| < halfwidth."""
    field_ = husimi_via_overlap(state)
    x, p = field_.lattice.mesh()
    inside = np.abs(x ** 2 + p ** 2 - radius_sq) < halfwidth
    values = np.clip(np.real(field_.values), 0.0, None)
    return float(values[inside].sum() / values.sum())


def hermite_annulus(epsilons: Sequence[float] = (0.04, 0.01), grid: Optional[SpaceGrid] = None,
                    radius_sq: float = 1.0) -> Report:
    """
    Hermite band at x^2 + p^2 = radius_sq. The Husimi mass in the annulus
    at the first eps sets the threshold; every smaller eps, in the order
    given, must hold at least the mass of the one before it.
    """
    report = Report(name="hermite_annulus")
    grid = grid or SpaceGrid(1, 4.0, 1024)
    masses = []
    for eps in epsilons:
        state = build_hermite(HermiteSpec(eps=eps, rule="uniform_band", radius_sq=radius_sq, width=0.05), grid)
        masses.append(annulus_mass(state, radius_sq))
        report.constants[f"annulus_mass[eps={eps:g}]"] = masses[-1]
    threshold = masses[0]
    report.constants["annulus_threshold"] = threshold
    shortfall = max((before - after for before, after in zip(masses, masses[1:])), default=0.0)
    report.add("annulus_improves", shortfall, bound=0.0,
               note=f"threshold {threshold:.4f} set at eps={epsilons[0]:g}")
    logging.info(f"Hermite annulus mass {' -> '.join(f'{m:.3f}' for m in masses)}")
    return report


class IdentitySuite(Experiment):
    """Every transform identity and oracle of the lab, at one-dimensional defaults."""

    kind = "identity_suite"

    def run(self) -> Outcome:
        grid = self.space_grid()
        potential = self.potential()
        outcome = Outcome(kind=self.kind)
        for eps in self.config.sweep.epsilons:
            for state in self._catalog(grid, eps):
                report = identity_checks(state, potential, name=f"identities[{state.label},eps={eps:g}]")
                outcome.add_report(report)
            if grid.dim == 1:
                probe = self._catalog(grid, eps)[0]
                regularity = cv_regularity_check(wigner(probe), potential if potential.smooth else None)
                regularity.name = f"cv_regularity[eps={eps:g}]"
                outcome.add_report(regularity)
                if not potential.has_singular:
                    squared = trace_of_H_squared(probe, potential)
                    squared.name = f"trace_of_H_squared[eps={eps:g}]"
                    outcome.add_report(squared)
                bound = certify_operator_bound(probe, seed=self.seed)
                bound.name = f"operator_bound[eps={eps:g}]"
                outcome.add_report(bound)

        probes = band_limited_probes(grid, 5, seed=self.seed)
        outcome.add_report(resolution_of_identity(grid, 0.25, probes))
        outcome.add_report(laplacian_coefficient_oracle())
        if grid.dim == 1:
            outcome.add_report(hermite_annulus())
        return outcome

    def _catalog(self, grid: SpaceGrid, eps: float) -> List[MixedState]:
        n = grid.dim
        states = [MixedState.pure(grid, eps, coherent_state(grid, [0.5] * n, [0.25] * n, eps), label="coherent")]
        if n == 1:
            states.append(build_hermite(HermiteSpec(eps=eps, rule="single", index=2), grid))
        if self.config.initial is not None:
            states.append(self.build_state(eps))
        return states
