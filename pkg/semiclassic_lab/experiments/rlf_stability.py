import logging

from semiclassic_lab.errors import ConfigurationError
from semiclassic_lab.experiments.base_experiment import Experiment
from semiclassic_lab.experiments.convergence_sweep import unit_mass
from semiclassic_lab.models.report import Outcome, PlotSeries
from semiclassic_lab.physics.classical import FlowPlan, flow, measure_preservation_audit, rlf_stability, sample_initial


class RLFStability(Experiment):
    """Push-forwards of one particle sample under shrinking mollification, and the flow's volume preservation."""

    kind = "rlf_stability"

    def run(self) -> Outcome:
        target = self.target()
        if target is None:
            raise ConfigurationError("a stability run samples a named [initial.target] density")
        classical, horizon = self.config.classical, self.config.sweep.horizon
        halfwidth = self.config.grid.halfwidth
        potential = self.potential()
        lattice = self.comparison_lattice()
        reference = unit_mass(target.tabulate(lattice))
        ensemble = sample_initial(reference, classical.particles, seed=self.seed)

        outcome = Outcome(kind=self.kind)
        report = rlf_stability(ensemble, potential, classical.deltas, horizon, lattice, step=classical.step,
                               r_min=classical.r_min, dictionary=self.dictionary(lattice), halfwidth=halfwidth)
        outcome.add_report(report)
        cauchy = bool(report.constants["cauchy"])
        outcome.verdict = outcome.verdict and cauchy

        deltas = sorted(classical.deltas, reverse=True)
        outcome.series["dP_successive"] = PlotSeries(
            x_label="delta", y_label="d_P",
            x=deltas[:-1], y=[report.constants[f"dP[{a:g},{b:g}]"] for a, b in zip(deltas, deltas[1:])])

        result = flow(ensemble, FlowPlan(min(deltas), classical.step, horizon, classical.r_min),
                      potential, halfwidth=halfwidth)
        outcome.notes.extend(result.warnings)
        audit = measure_preservation_audit(result, potential, source=reference, lattice=lattice,
                                           seed=self.seed, halfwidth=halfwidth)
        outcome.add_report(audit)
        logging.info(f"stability run: cauchy={cauchy}, measure preserved={audit.passed}")
        return outcome
