import logging

from semiclassic_lab.experiments.base_experiment import Experiment
from semiclassic_lab.models.report import Outcome, PlotSeries
from semiclassic_lab.physics.initdata import HermiteSpec, ToeplitzSpec, toeplitz_bound_report, validate_assumptions
from semiclassic_lab.physics.metrics import tightness_profile
from semiclassic_lab.physics.quantum import smoothed_density_bound
from semiclassic_lab.physics.states import certify_operator_bound, kinetic_terms

_RADII = (1.0, 2.0, 4.0, 8.0)


class AssumptionCheck(Experiment):
    kind = "assumption_check"

    def run(self) -> Outcome:
        initial = self.config.initial
        potential = self.potential()
        target = self.target()
        outcome = Outcome(kind=self.kind)
        for eps in self.config.sweep.epsilons:
            state = self.build_state(eps)
            report = validate_assumptions(state, potential, target, radii=_RADII)
            report.name = f"assumptions[eps={eps:g}]"
            outcome.add_report(report)

            bound = certify_operator_bound(state, seed=self.seed)
            bound.name = f"operator_bound[eps={eps:g}]"
            outcome.add_report(bound)
            smoothed = smoothed_density_bound(state, 1.0, constant=bound.constants["C"])
            smoothed.name = f"smoothed_density[eps={eps:g}]"
            outcome.add_report(smoothed)

            if initial.kind == "hermite":
                constants = HermiteSpec(eps=eps, **initial.params).constants()
                outcome.constants.update({f"{k}[eps={eps:g}]": v for k, v in constants.items()})
            elif initial.kind == "toeplitz":
                toeplitz = toeplitz_bound_report(ToeplitzSpec(eps=eps, target=target, **initial.params), state)
                toeplitz.name = f"toeplitz_bound[eps={eps:g}]"
                outcome.add_report(toeplitz)

            p2 = float((state.weights * kinetic_terms(state)).sum())
            profile = tightness_profile(state, _RADII, p2_moment=p2)
            outcome.tightness[f"eps={eps:g}"] = profile
            outcome.series[f"tightness_eps{eps:g}"] = PlotSeries(x_label="R", y_label="outside_mass",
                                                                 x=profile.radii, y=profile.outside)
            logging.info(f"assumptions at eps={eps:g}: {'hold' if report.passed else 'fail'}")
        return outcome
