import logging

import numpy as np

from semiclassic_lab.experiments.base_experiment import Experiment
from semiclassic_lab.models.report import Outcome, PlotSeries, Report
from semiclassic_lab.physics.quantum import conservation_audit, propagate
from semiclassic_lab.utils.fits import order_fit

# drifts below this are roundoff and carry no order information
_ROUNDOFF = 1e-12


class ConservationAuditExperiment(Experiment):
    """Conserved and bounded quantities along the propagation, and the step order of the energy drift."""

    kind = "conservation_audit"

    def run(self) -> Outcome:
        sweep = self.config.sweep
        outcome = Outcome(kind=self.kind)
        for eps in sweep.epsilons:
            state = self.build_state(eps)
            trajectory = propagate(state, self.propagation_plan(sweep.record_times))
            audit = conservation_audit(trajectory, smoothing=(1.0,), strict=False)
            outcome.audits[f"eps={eps:g}"] = audit
            outcome.verdict = outcome.verdict and audit.passed
            outcome.series[f"energy_eps{eps:g}"] = PlotSeries(
                x_label="t", y_label="energy", x=list(trajectory.times), y=list(audit.series["energy"]))
            if not audit.passed:
                logging.warning(f"conservation audit at eps={eps:g} failed on {', '.join(audit.failures)}")
            outcome.add_report(self._step_order(state, eps))
        return outcome

    def _step_order(self, state, eps: float) -> Report:
        """Energy drift at dt, dt/2, dt/4, ...; Strang splitting should show order two."""
        sweep = self.config.sweep
        report = Report(name=f"energy_order[eps={eps:g}]")
        steps, drifts = [], []
        for k in range(sweep.dt_halvings):
            plan = self.propagation_plan(sweep.record_times, dt=sweep.dt / 2 ** k)
            trajectory = propagate(state, plan)
            energy = conservation_audit(trajectory, strict=False).series["energy"]
            steps.append(trajectory.dt)
            drifts.append(float(np.max(np.abs(np.asarray(energy) - energy[0]))))
        report.constants.update({f"drift[dt={h:.3g}]": d for h, d in zip(steps, drifts)})
        distinct = len(set(np.round(np.log2(steps), 6)))
        if distinct < 2:
            report.note("every halving was capped to the same step; order not measured")
            return report
        if max(drifts) <= _ROUNDOFF:
            report.note("energy drift is at roundoff for every step; order not measured")
            return report
        order = order_fit(steps, drifts)
        report.add("energy_order_deviation", abs(order - 2.0), bound=0.2, note=f"measured order {order:.3f}")
        report.constants["order"] = order
        return report
