"""
Split-operator propagation of finite-rank states and the audits of the
quantities the unitary group conserves or bounds.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from semiclassic_lab.config import settings
from semiclassic_lab.errors import AuditFailure, BoundaryEscapeError, ParameterError
from semiclassic_lab.models.report import ConservationAudit, Report
from semiclassic_lab.physics.grid import GaussianKernel, boundary_mass, forward_transform, gaussian_smooth, inverse_transform
from semiclassic_lab.physics.potentials import PotentialSpec, potential_on_grid, rough_sup
from semiclassic_lab.physics.states import (
    MixedState,
    coherent_family,
    disop_constant,
    kernel_diagonal,
    kinetic_terms,
    momentum_density,
    observable_expectation,
    phase_lattice_points,
    quadratic_form,
    singular_square_expectation,
    spectral_norm,
)

_PROBES_PER_AXIS = {1: 33, 2: 9, 3: 3}
_PROBE_CHUNK = 512


@dataclass(frozen=True)
class PropagationPlan:
    dt: float
    horizon: float
    potential: PotentialSpec
    record_interval: Optional[float] = None
    scheme: str = "strang"

    def __post_init__(self):
        if not self.dt > 0 or not self.horizon >= 0:
            raise ParameterError(f"time step and horizon must be positive, got dt={self.dt} T={self.horizon}")
        if self.scheme != "strang":
            raise ParameterError(f"unsupported splitting scheme '{self.scheme}'")
        if self.record_interval is not None and not self.record_interval > 0:
            raise ParameterError(f"record interval must be positive, got {self.record_interval}")

    def record_times(self) -> np.ndarray:
        """Record times from 0 to the horizon, both included."""
        if self.horizon == 0:
            return np.zeros(1)
        interval = self.record_interval or self.horizon
        count = int(np.floor(self.horizon / interval + 1e-9))
        times = interval * np.arange(count + 1)
        if self.horizon - times[-1] > 1e-12 * max(1.0, self.horizon):
            times = np.append(times, self.horizon)
        return times

    def step_for(self, eps: float) -> float:
        return min(self.dt, settings.STEP_EPS_FRACTION * eps)


@dataclass
class Trajectory:
    times: List[float] = field(default_factory=list)
    states: List[MixedState] = field(default_factory=list)
    dt: float = 0.0
    steps: int = 0
    step_drift: float = 0.0
    plan: Optional[PropagationPlan] = None

    def __len__(self) -> int:
        return len(self.times)

    def final(self) -> MixedState:
        return self.states[-1]


class SplitStep:
    """
    One Strang step exp(-i dt U/(2 eps)) exp(-i dt eps |k|^2/2) exp(-i dt U/(2 eps))
    applied to a stack of modes. Every step is checked to keep each
    eigenfunction norm; `step_drift` holds the largest change seen.
    """

    def __init__(self, state: MixedState, potential_values: np.ndarray, dt: float):
        self.grid = state.grid
        self.eps = state.eps
        self.dt = dt
        self.step_drift = 0.0
        self._exp_potential = np.exp(-0.5j * dt * potential_values / self.eps)
        self._exp_kinetic = np.exp(-0.5j * dt * self.eps * self.grid.squared_wavenumber())

    def _norms(self, modes: np.ndarray) -> np.ndarray:
        flat = modes.reshape(modes.shape[0], -1)
        return np.sqrt(np.sum(np.abs(flat) ** 2, axis=1) * self.grid.cell_volume)

    def __call__(self, modes: np.ndarray, steps: int = 1) -> np.ndarray:
        norms = self._norms(modes)
        for step in range(steps):
            hat = forward_transform(modes * self._exp_potential, self.grid, leading=1)
            modes = inverse_transform(hat * self._exp_kinetic, self.grid, leading=1) * self._exp_potential
            updated = self._norms(modes)
            change = float(np.max(np.abs(updated - norms)))
            if change > settings.STEP_NORM_TOLERANCE:
                raise AuditFailure(f"split step {step} changed an eigenfunction norm by {change:.3e}",
                                   offender="step_norm", value=change)
            self.step_drift = max(self.step_drift, change)
            norms = updated
        return modes


def occupied_wavenumber(state: MixedState, tail: float = 1e-12) -> float:
    """Smallest K with spectral mass beyond |k| > K below `tail`."""
    hat = forward_transform(state.modes, state.grid, leading=1)
    power = np.tensordot(state.weights, np.abs(hat) ** 2, axes=1).reshape(-1)
    k = np.sqrt(state.grid.squared_wavenumber()).reshape(-1)
    order = np.argsort(k)[::-1]
    beyond = np.cumsum(power[order]) / power.sum()
    inside = order[beyond > tail]
    return float(k[inside].max()) if inside.size else 0.0


def _check_boundary(state: MixedState, t: float) -> float:
    mass = boundary_mass(kernel_diagonal(state), state.grid)
    if mass > settings.BOUNDARY_MASS_TOLERANCE:
        raise BoundaryEscapeError(f"boundary mass {mass:.3e} at t={t:.4g} exceeds tolerance", mass=mass)
    return mass


def propagate(state: MixedState, plan: PropagationPlan,
              on_record: Optional[Callable[[float, MixedState], None]] = None) -> Trajectory:
    dt = plan.step_for(state.eps)
    k_max = occupied_wavenumber(state)
    if k_max > 0:
        cfl_step = 2.0 * settings.CFL_CAP / (state.eps * k_max ** 2)
        if dt > cfl_step:
            logging.warning(f"time step {dt:.3g} exceeds kinetic phase cap, reduced to {cfl_step:.3g}")
            dt = cfl_step

    potential_values = potential_on_grid(plan.potential, state.grid)
    times = plan.record_times()
    trajectory = Trajectory(dt=dt, plan=plan)
    modes = state.modes
    t = 0.0
    for target in times:
        interval = target - t
        if interval > 0:
            # the last step of every interval lands on the record time
            steps = int(np.ceil(interval / dt - 1e-9))
            stepper = SplitStep(state, potential_values, interval / steps)
            modes = stepper(modes, steps)
            trajectory.step_drift = max(trajectory.step_drift, stepper.step_drift)
            trajectory.steps += steps
            t = float(target)
        current = state.with_modes(modes)
        _check_boundary(current, t)
        drift = float(np.max(np.abs(current.norms() - 1.0)))
        if drift > settings.NORM_DRIFT_TOLERANCE:
            raise AuditFailure(f"eigenfunction norm drifted by {drift:.3e} at t={t:.4g}", offender="norm", value=drift)
        trajectory.times.append(t)
        trajectory.states.append(current)
        if on_record is not None:
            on_record(t, current)
    logging.info(f"propagated {state.rank} modes to T={plan.horizon} in {trajectory.steps} steps (dt={dt:.3g})")
    return trajectory


def singular_moment(state: MixedState, potential: PotentialSpec):
    """(int U_s^2 rho(x, x) dx, sum_j mu_j ||eps grad phi_j||^2)"""
    return singular_square_expectation(state, potential), float(np.sum(state.weights * kinetic_terms(state)))


def husimi_probe_lattice(state: MixedState, per_axis: Optional[int] = None) -> np.ndarray:
    """Coherent probe centres covering the bulk of the state in x and p."""
    grid = state.grid
    per_axis = per_axis or _PROBES_PER_AXIS.get(grid.dim, 3)
    density = kernel_diagonal(state)
    momenta = momentum_density(state)
    x_mesh = grid.mesh()
    p_mesh = [state.eps * k for k in grid.wavenumber_mesh()]
    x_mean = [float(np.sum(m * density) / np.sum(density)) for m in x_mesh]
    p_mean = [float(np.sum(m * momenta) / np.sum(momenta)) for m in p_mesh]
    x_std = max(float(np.sqrt(np.sum(m ** 2 * density) / np.sum(density) - c ** 2)) for m, c in zip(x_mesh, x_mean))
    p_std = max(float(np.sqrt(max(np.sum(m ** 2 * momenta) / np.sum(momenta) - c ** 2, 0.0))) for m, c in zip(p_mesh, p_mean))
    x_half = min(3 * x_std + np.sqrt(state.eps), grid.halfwidth)
    p_half = 3 * p_std + np.sqrt(state.eps)
    spacing = 2 * max(x_half, p_half) / per_axis
    return phase_lattice_points(grid.dim, x_half, p_half, spacing, x_mean, p_mean)


def husimi_sup(state: MixedState, probes: np.ndarray) -> float:
    """Largest Husimi value over the coherent probe centres."""
    best = 0.0
    for start in range(0, len(probes), _PROBE_CHUNK):
        family = coherent_family(state.grid, probes[start:start + _PROBE_CHUNK], state.eps)
        best = max(best, float(np.max(quadratic_form(state, family))))
    return best / (2 * np.pi * state.eps) ** state.dim


def smoothed_density_bound(state: MixedState, lam: float, constant: Optional[float] = None) -> Report:
    """
    sup_y sum_j mu_j |phi_j * G_{lam eps^2}(y)|^2 against C (2 pi lam)^(-n/2),
    C the operator-bound constant of the state.
    """
    if not lam > 0:
        raise ParameterError(f"smoothing scale must be positive, got {lam}")
    c = disop_constant(state) if constant is None else constant
    kernel = GaussianKernel(lam * state.eps ** 2, state.grid.dim)
    smoothed = gaussian_smooth(state.modes, state.grid, kernel, leading=1)
    lhs = float(np.max(np.tensordot(state.weights, np.abs(smoothed) ** 2, axes=1)))
    rhs = c * (2 * np.pi * lam) ** (-state.grid.dim / 2)
    report = Report(name="smoothed_density_bound")
    report.constants.update({"lambda": lam, "C": c})
    report.add("smoothed_density", lhs, bound=rhs + settings.BOUND_SLACK)
    return report


_ROUNDOFF_FLOOR = 1e-12


def conservation_tolerance(horizon: float, dt: float) -> float:
    """Drift allowed for the conserved sums over [0, T]: the prefactor times (T / dt) dt^2."""
    return max(settings.CONSERVATION_TOLERANCE * (horizon / dt) * dt ** 2, _ROUNDOFF_FLOOR)


def conservation_audit(trajectory: Trajectory, potential: Optional[PotentialSpec] = None,
                       constant: Optional[float] = None, probes: Optional[np.ndarray] = None,
                       smoothing: Sequence[float] = (), strict: bool = True) -> ConservationAudit:
    """
    Series of the conserved and bounded quantities along a trajectory. With
    `strict`, a drift beyond tolerance raises AuditFailure naming the worst
    offender; otherwise the failures are only recorded on the audit.
    """
    if not trajectory.states:
        raise ParameterError("empty trajectory")
    potential = potential or trajectory.plan.potential
    initial = trajectory.states[0]
    grid = initial.grid
    values = potential_on_grid(potential, grid)
    c = disop_constant(initial) if constant is None else constant
    probes = husimi_probe_lattice(initial) if probes is None else probes
    ub_sup = rough_sup(potential, grid.halfwidth)

    names = ["trace", "energy", "H2sum", "C1", "C2", "husimi_sup", "p2moment", "spectral_norm"]
    names += [f"smoothed_{lam:g}" for lam in smoothing]
    series: Dict[str, List[float]] = {name: [] for name in names}
    for state in trajectory.states:
        c1, c2 = singular_moment(state, potential)
        series["trace"].append(float(np.sum(kernel_diagonal(state)) * grid.cell_volume))
        series["energy"].append(observable_expectation(state, "H", potential_values=values))
        series["H2sum"].append(observable_expectation(state, "H_squared_vector", potential_values=values))
        series["C1"].append(c1)
        series["C2"].append(c2)
        series["husimi_sup"].append(husimi_sup(state, probes))
        series["p2moment"].append(c2 + grid.dim * state.eps / 2)
        series["spectral_norm"].append(spectral_norm(state))
        for lam in smoothing:
            report = smoothed_density_bound(state, lam, constant=c)
            series[f"smoothed_{lam:g}"].append(report.check("smoothed_density").value)

    energy0 = series["energy"][0]
    h2_0 = series["H2sum"][0]
    # a priori combinations built from the initial data
    c2_bound = 2 * (energy0 + ub_sup)
    c1_bound = (np.sqrt(h2_0) + ub_sup) ** 2
    constants = {
        "C": c,
        "ub_sup": ub_sup,
        "C1_bound": float(c1_bound),
        "C2_bound": float(c2_bound),
        "p2_bound": float(c2_bound + grid.dim / 2),
        "husimi_bound": c / (2 * np.pi) ** grid.dim,
        "dt": trajectory.dt,
        "step_drift": trajectory.step_drift,
    }

    def relative(name):
        ref = series[name][0]
        scale = abs(ref) if abs(ref) > 1e-12 else 1.0
        return max(abs(v - ref) for v in series[name]) / scale

    tol_cons = conservation_tolerance(trajectory.times[-1], trajectory.dt) if trajectory.dt > 0 else _ROUNDOFF_FLOOR
    constants["tol_cons"] = tol_cons
    drifts = {
        "trace": max(abs(v - series["trace"][0]) for v in series["trace"]),
        "energy": relative("energy"),
        "H2sum": relative("H2sum"),
        "spectral_norm": max(abs(v - series["spectral_norm"][0]) for v in series["spectral_norm"]),
        # bounded quantities record their worst excess over the bound
        "C1": max(series["C1"]) - c1_bound,
        "C2": max(series["C2"]) - c2_bound,
        "husimi_sup": max(series["husimi_sup"]) - constants["husimi_bound"],
        "p2moment": max(series["p2moment"]) - constants["p2_bound"],
    }
    tolerances = {
        "trace": min(settings.TRACE_DRIFT_TOLERANCE, tol_cons),
        "energy": tol_cons,
        "H2sum": tol_cons,
        "spectral_norm": 1e-10,
        "C1": settings.BOUND_SLACK,
        "C2": settings.BOUND_SLACK,
        "husimi_sup": settings.BOUND_SLACK,
        "p2moment": settings.BOUND_SLACK,
    }
    for lam in smoothing:
        name = f"smoothed_{lam:g}"
        rhs = c * (2 * np.pi * lam) ** (-grid.dim / 2)
        drifts[name] = max(series[name]) - rhs
        tolerances[name] = settings.BOUND_SLACK

    failures = [name for name in drifts if drifts[name] > tolerances[name]]
    for name in failures:
        logging.warning(f"conservation audit: {name} drift {drifts[name]:.3e} exceeds {tolerances[name]:.3e}")
    audit = ConservationAudit(
        times=list(trajectory.times),
        series=series,
        drifts={k: float(v) for k, v in drifts.items()},
        tolerances=tolerances,
        constants=constants,
        passed=not failures,
        failures=failures,
    )
    if strict:
        audit.raise_for_failure()
    return audit
