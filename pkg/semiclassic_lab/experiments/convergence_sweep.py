from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional
import logging
import math

import numpy as np

from semiclassic_lab.config import settings
from semiclassic_lab.errors import ConfigurationError, LabError, MassMismatchError
from semiclassic_lab.experiments.base_experiment import Experiment, pick
from semiclassic_lab.models.report import ConvergenceReport, ConvergenceRow, Outcome, PlotSeries
from semiclassic_lab.physics.classical import FlowPlan, flow, push_forward_density, sample_initial
from semiclassic_lab.physics.grid import PhaseField, PhaseLattice
from semiclassic_lab.physics.initdata import validate_assumptions
from semiclassic_lab.physics.metrics import TestFunctionDictionary, dP
from semiclassic_lab.physics.quantum import conservation_audit, propagate
from semiclassic_lab.physics.phase_space import husimi_on_lattice
from semiclassic_lab.utils.fits import is_nonincreasing, rate_fit


def unit_mass(phase_field: PhaseField) -> PhaseField:
    """The field rescaled to mass one; the captured mass is kept in the metadata."""
    captured = phase_field.integral()
    if not captured > 0:
        raise MassMismatchError(f"{phase_field.tag} field carries no mass on the lattice")
    return PhaseField(phase_field.lattice, np.real(phase_field.values) / captured, phase_field.tag,
                      phase_field.eps, 1.0, metadata={**phase_field.metadata, "captured_mass": captured})


@dataclass
class CellResult:
    epsilon: float
    rows: List[ConvergenceRow] = field(default_factory=list)
    initial_gap: float = math.nan
    drifts: Dict[str, float] = field(default_factory=dict)
    aborted: Optional[str] = None


class ConvergenceSweep(Experiment):
    """
    d_P between the Husimi transform at each eps and the classical
    push-forward of the limit density, on one comparison lattice.
    """

    kind = "convergence_sweep"

    def run(self) -> Outcome:
        target = self.target()
        if target is None:
            raise ConfigurationError("a convergence sweep compares against a named [initial.target] density")
        sweep, classical = self.config.sweep, self.config.classical
        times = sweep.times()
        lattice = self.comparison_lattice()
        dictionary = self.dictionary(lattice)
        potential = self.potential()
        outcome = Outcome(kind=self.kind)

        # ---------- 1. classical side, shared by every eps ----------
        reference = unit_mass(target.tabulate(lattice))
        ensemble = sample_initial(reference, classical.particles, seed=self.seed)
        interval = self.propagation_plan(times).record_interval
        plan = FlowPlan(classical.delta, classical.step, sweep.horizon, classical.r_min, record_interval=interval)
        result = flow(ensemble, plan, potential, halfwidth=self.config.grid.halfwidth)
        self.snapshot("classical_final", result.final())
        outcome.notes.extend(result.warnings)
        wanted = sorted(set([0.0] + times))
        ensembles = pick(result.times, result.ensembles, wanted)
        classical_fields = {t: unit_mass(push_forward_density(e, lattice, classical.bandwidth))
                            for t, e in ensembles.items()}
        noise = dP(classical_fields[0.0], reference, dictionary)
        outcome.constants.update({
            "sampling_noise": noise,
            "captured_mass": reference.metadata["captured_mass"],
            "excluded_mass": result.excluded_mass,
            "flow_energy_drift": result.energy_drift,
        })
        logging.info(f"classical reference: {classical.particles} particles, sampling noise {noise:.3e}")

        # ---------- 2. one cell per eps ----------
        def cell(eps: float) -> CellResult:
            return self._cell(eps, times, lattice, dictionary, classical_fields, result.valid)

        workers = max(1, settings.SWEEP_WORKERS)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                cells = list(pool.map(cell, sweep.epsilons))
        else:
            cells = [cell(eps) for eps in sweep.epsilons]

        # ---------- 3. verdict ----------
        report = ConvergenceReport(dictionary_size=dictionary.size)
        for c in cells:
            report.rows.extend(c.rows)
            if c.aborted:
                report.aborted.append(c.aborted)
                continue
            report.audits[f"{c.epsilon:g}"] = c.drifts
            report.trend[f"initial_gap[{c.epsilon:g}]"] = c.initial_gap
            report.sup_by_epsilon[f"{c.epsilon:g}"] = max((r.d_P for r in c.rows), default=math.nan)
        completed = [c for c in cells if not c.aborted]
        sups = [report.sup_by_epsilon[f"{c.epsilon:g}"] for c in completed]
        if completed:
            report.floor = completed[-1].initial_gap
            fit = rate_fit([c.epsilon for c in completed], sups)
            report.trend.update({"order": fit["order"], "prefactor": fit["prefactor"], "misfit": fit["misfit"]})
        monotone = is_nonincreasing(sups, tolerance=noise) if sups else False
        settles = bool(sups) and sups[-1] <= report.floor + 3 * noise
        report.verdict = not report.aborted and monotone and settles and result.valid
        report.trend.update({"noise": noise, "monotone": float(monotone), "settles": float(settles)})
        if not monotone:
            report.notes.append("sup_t d_P does not decrease with eps beyond the sampling noise")
        if not settles and sups:
            report.notes.append(f"smallest-eps distance {sups[-1]:.3e} stays above floor {report.floor:.3e} + 3 noise")
        if not result.valid:
            report.notes.append("the classical reference run is invalid (excluded mass)")
        outcome.convergence = report
        outcome.verdict = report.verdict

        for t in times:
            rows = sorted((r for r in report.rows if r.t == t), key=lambda r: -r.epsilon)
            outcome.series[f"dP_t{t:g}"] = PlotSeries(x_label="epsilon", y_label="d_P",
                                                      x=[r.epsilon for r in rows], y=[r.d_P for r in rows])
        logging.info(f"convergence sweep verdict: {'pass' if report.verdict else 'fail'}")
        return outcome

    def _cell(self, eps: float, times: List[float], lattice: PhaseLattice,
              dictionary: TestFunctionDictionary, classical_fields: Dict[float, PhaseField],
              classical_valid: bool) -> CellResult:
        cell = CellResult(epsilon=eps)
        try:
            state = self.build_state(eps)
            assumptions = validate_assumptions(state, self.potential(), self.target())
            if not assumptions.passed:
                names = ", ".join(c.name for c in assumptions.failures())
                cell.aborted = f"eps={eps:g}: initial data fails {names}"
                logging.warning(cell.aborted)
                return cell
            self.snapshot(f"state_eps{eps:g}", state)
            trajectory = propagate(state, self.propagation_plan(times))
            states = pick(trajectory.times, trajectory.states, sorted(set([0.0] + times)))
            audit = conservation_audit(trajectory, strict=False)
            cell.drifts = dict(audit.drifts)
            cell.initial_gap = self._distance(states[0.0], lattice, classical_fields[0.0], dictionary, [])
            for t in times:
                flags = [] if classical_valid else ["classical_invalid"]
                if not audit.passed:
                    flags.append("conservation")
                d = self._distance(states[t], lattice, classical_fields[t], dictionary, flags,
                                   snapshot=f"husimi_eps{eps:g}" if t == times[-1] else None)
                cell.rows.append(ConvergenceRow(epsilon=eps, t=t, d_P=d, flags=flags))
        except LabError as e:
            cell.aborted = f"eps={eps:g}: {e}"
            logging.warning(f"sweep cell aborted: {cell.aborted}")
        return cell

    def _distance(self, state, lattice: PhaseLattice, reference: PhaseField, dictionary: TestFunctionDictionary,
                  flags: List[str], snapshot: Optional[str] = None) -> float:
        husimi_field = husimi_on_lattice(state, lattice)
        if snapshot:
            self.snapshot(snapshot, husimi_field)
        if 1.0 - husimi_field.integral() > settings.BOUNDARY_MASS_TOLERANCE:
            flags.append("husimi_mass_deficit")
        return dP(unit_mass(husimi_field.with_values(np.real(husimi_field.values))), reference, dictionary)
