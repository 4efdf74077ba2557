"""
Particle approximation of the regular Lagrangian flow of b(x, p) = (p, -grad U(x)),
with the rough gradient mollified at scale delta and the singular part kept.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.ndimage

from semiclassic_lab.config import settings
from semiclassic_lab.errors import MassMismatchError, ParameterError, StateValidationError
from semiclassic_lab.models.report import Report
from semiclassic_lab.physics.grid import PhaseField, PhaseLattice
from semiclassic_lab.physics.metrics import TestFunctionDictionary, dP
from semiclassic_lab.physics.potentials import MollifiedGradient, PotentialSpec, mollified_gradient
from semiclassic_lab.utils.fits import is_nonincreasing, order_fit

_STEP_LIPSCHITZ_CAP = 0.1


@dataclass(frozen=True)
class ParticleEnsemble:
    x: np.ndarray
    p: np.ndarray
    weights: np.ndarray
    t: float = 0.0
    seed: Optional[int] = None
    source: str = ""
    frozen: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.x.shape != self.p.shape or self.x.ndim != 2 or self.weights.shape != (self.x.shape[0],):
            raise ParameterError(f"ensemble arrays disagree: x {self.x.shape}, p {self.p.shape}, w {self.weights.shape}")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12:
            raise StateValidationError(f"particle weights sum to {float(np.sum(self.weights))!r}")
        if np.any(self.weights < 0):
            raise StateValidationError("particle weights must be nonnegative")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.p))):
            raise StateValidationError("particle coordinates must be finite")
        if self.frozen is None:
            object.__setattr__(self, "frozen", np.zeros(self.x.shape[0], dtype=bool))

    @property
    def count(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def excluded_mass(self) -> float:
        return float(np.sum(self.weights[self.frozen]))

    def phase_points(self) -> np.ndarray:
        return np.concatenate([self.x, self.p], axis=1)

    def moved(self, x: np.ndarray, p: np.ndarray, t: float, frozen: Optional[np.ndarray] = None) -> "ParticleEnsemble":
        return replace(self, x=x, p=p, t=t, frozen=self.frozen if frozen is None else frozen)

    def describe(self) -> dict:
        return {
            "count": self.count,
            "dim": self.dim,
            "t": self.t,
            "seed": self.seed,
            "source": self.source,
            "excluded_mass": self.excluded_mass,
        }


@dataclass(frozen=True)
class FlowPlan:
    delta: float
    step: float
    horizon: float
    r_min: float = 0.0
    record_interval: Optional[float] = None
    max_halvings: int = 12

    def __post_init__(self):
        if not self.delta > 0:
            raise ParameterError(f"mollification scale must be positive, got {self.delta}")
        if not self.step > 0 or self.horizon < 0:
            raise ParameterError(f"step and horizon must be positive, got h={self.step} T={self.horizon}")

    def record_times(self) -> np.ndarray:
        if self.horizon == 0:
            return np.zeros(1)
        interval = self.record_interval or self.horizon
        count = int(np.floor(self.horizon / interval + 1e-9))
        times = interval * np.arange(count + 1)
        if self.horizon - times[-1] > 1e-12 * max(1.0, self.horizon):
            times = np.append(times, self.horizon)
        return times


@dataclass
class FlowResult:
    times: List[float] = field(default_factory=list)
    ensembles: List[ParticleEnsemble] = field(default_factory=list)
    plan: Optional[FlowPlan] = None
    step: float = 0.0
    lipschitz: float = 0.0
    energy_drift: float = 0.0
    energy_bound: float = 0.0
    warnings: List[str] = field(default_factory=list)

    def final(self) -> ParticleEnsemble:
        return self.ensembles[-1]

    @property
    def excluded_mass(self) -> float:
        return self.final().excluded_mass

    @property
    def valid(self) -> bool:
        return self.excluded_mass < settings.EXCLUDED_MASS_TOLERANCE

    @property
    def energy_ok(self) -> bool:
        return self.energy_drift <= self.energy_bound


class LeapfrogIntegrator:
    """
    Kick-drift-kick for H = |p|^2 / 2 + U: every stage is a shear, so one
    step has Jacobian determinant exactly 1.
    """

    def __init__(self, force: Callable[[np.ndarray], np.ndarray]):
        self.force = force

    def step(self, x: np.ndarray, p: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
        p = p - 0.5 * h * self.force(x)
        x = x + h * p
        p = p - 0.5 * h * self.force(x)
        return x, p

    def steps(self, x: np.ndarray, p: np.ndarray, h: float, count: int) -> Tuple[np.ndarray, np.ndarray]:
        for _ in range(count):
            x, p = self.step(x, p, h)
        return x, p


def _lattice_density(density, lattice: Optional[PhaseLattice]) -> PhaseField:
    if isinstance(density, PhaseField):
        return density
    if lattice is None or not hasattr(density, "tabulate"):
        raise ParameterError("an analytic density is sampled through a lattice tabulation")
    return density.tabulate(lattice)


def sample_initial(density, count: int, seed: Optional[int] = None, lattice: Optional[PhaseLattice] = None,
                   measure: Optional[bool] = None) -> ParticleEnsemble:
    """
    Equal-weight particles by inverse CDF over the lattice cells, with a
    uniform position inside each chosen cell. The d_P distance of the
    reconstructed sample to the density is recorded when measured.
    """
    if count < 1:
        raise ParameterError(f"particle count must be positive, got {count}")
    seed = settings.DEFAULT_SEED if seed is None else seed
    field_ = _lattice_density(density, lattice)
    values = np.real(field_.values)
    if np.min(values) < -1e-12:
        raise ParameterError(f"cannot sample a density with negative values (min {np.min(values)!r})")
    cells = np.clip(values, 0.0, None) * field_.lattice.cell_volume
    mass = float(cells.sum())
    if abs(mass - 1.0) > settings.MASS_MISMATCH_TOLERANCE:
        raise MassMismatchError(f"sampling density has mass {mass!r}, expected 1")
    if float(cells.max()) > 0.5 * mass:
        raise ParameterError("density is concentrated on a single cell; bounded densities are required")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(cells.reshape(-1)) / mass
    u = (np.arange(count) + rng.random(count)) / count
    flat = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
    index = np.unravel_index(flat, values.shape)
    axes = field_.lattice.x_axes + field_.lattice.p_axes
    spacings = field_.lattice.spacings
    coords = np.stack([axis[i] + (rng.random(count) - 0.5) * s for axis, i, s in zip(axes, index, spacings)], axis=1)
    order = rng.permutation(count)
    coords = coords[order]
    n = field_.lattice.dim
    ensemble = ParticleEnsemble(coords[:, :n], coords[:, n:], np.full(count, 1.0 / count), 0.0, seed,
                                source=field_.tag)
    if measure if measure is not None else n <= 1:
        distance = dP(push_forward_density(ensemble, field_.lattice), field_.with_values(values))
        logging.info(f"sampled {count} particles (seed {seed}); d_P to the density {distance:.3e}")
    return ensemble


def _energy(gradient: MollifiedGradient, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    return 0.5 * np.sum(p ** 2, axis=1) + gradient.mollified_potential(x)


def _guarded(integrator: LeapfrogIntegrator, gradient: MollifiedGradient, x: np.ndarray, p: np.ndarray,
             h: float, max_halvings: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Re-integrate one step with 2^k substeps until the energy change is below
    h^2 max(1, |E|); particles that never settle keep their start point and
    are frozen.
    """
    start = _energy(gradient, x, p)
    new_x, new_p = x.copy(), p.copy()
    settled = np.zeros(x.shape[0], dtype=bool)
    for k in range(1, max_halvings + 1):
        pending = ~settled
        if not np.any(pending):
            break
        sub = h / 2 ** k
        tx, tp = integrator.steps(x[pending], p[pending], sub, 2 ** k)
        with np.errstate(invalid="ignore", divide="ignore"):
            drift = np.abs(_energy(gradient, tx, tp) - start[pending])
        ok = np.isfinite(drift) & (drift <= h ** 2 * np.maximum(1.0, np.abs(start[pending])))
        rows = np.nonzero(pending)[0][ok]
        new_x[rows], new_p[rows] = tx[ok], tp[ok]
        settled[rows] = True
    return new_x, new_p, ~settled


def flow(ensemble: ParticleEnsemble, plan: FlowPlan, potential: PotentialSpec,
         halfwidth: float = 8.0) -> FlowResult:
    """Leapfrog under b_delta = (p, -grad U_b * G_{delta^2} - grad U_s), recorded on the plan's times."""
    if ensemble.dim != potential.dim:
        raise ParameterError(f"ensemble dimension {ensemble.dim} does not match potential {potential.dim}")
    gradient = mollified_gradient(potential, plan.delta, halfwidth=halfwidth)
    singular = potential.singular_set
    if potential.has_singular and np.any(singular.distance(ensemble.x) <= plan.r_min):
        raise ParameterError(f"particles must start farther than r_min={plan.r_min} from the singular set")
    result = FlowResult(plan=plan, lipschitz=gradient.lipschitz, warnings=list(gradient.warnings))
    h = plan.step
    if h * gradient.lipschitz > _STEP_LIPSCHITZ_CAP:
        h = _STEP_LIPSCHITZ_CAP / gradient.lipschitz
        message = f"step reduced from {plan.step} to {h:.3g} to keep h * Lip <= {_STEP_LIPSCHITZ_CAP}"
        logging.warning(message)
        result.warnings.append(message)
    integrator = LeapfrogIntegrator(gradient)
    x, p = ensemble.x.copy(), ensemble.p.copy()
    frozen = ensemble.frozen.copy()
    energy0 = _energy(gradient, x, p)
    times = plan.record_times()
    result.times.append(float(times[0]))
    result.ensembles.append(ensemble)
    drift, peak_p, peak_force = 0.0, float(np.max(np.abs(p))) if p.size else 0.0, 0.0
    t = float(times[0])
    for target in times[1:]:
        count = max(1, int(np.ceil((target - t) / h - 1e-9)))
        sub = (target - t) / count
        for _ in range(count):
            active = ~frozen
            nx, np_ = integrator.step(x[active], p[active], sub)
            if potential.has_singular and plan.r_min > 0:
                near = (singular.distance(nx) < plan.r_min) | (singular.distance(x[active]) < plan.r_min)
                near |= ~np.all(np.isfinite(nx), axis=1) | ~np.all(np.isfinite(np_), axis=1)
                if np.any(near):
                    rows = np.nonzero(active)[0][near]
                    gx, gp, stuck = _guarded(integrator, gradient, x[rows], p[rows], sub, plan.max_halvings)
                    nx[near], np_[near] = gx, gp
                    if np.any(stuck):
                        frozen[rows[stuck]] = True
                        logging.warning(f"{int(stuck.sum())} particle(s) frozen at t={t:.4g}: step-halving floor reached")
            x[active], p[active] = nx, np_
            t += sub
        live = ~frozen
        energies = _energy(gradient, x[live], p[live])
        drift = max(drift, float(np.max(np.abs(energies - energy0[live]))) if np.any(live) else 0.0)
        peak_p = max(peak_p, float(np.max(np.abs(p[live]))) if np.any(live) else 0.0)
        peak_force = max(peak_force, float(np.max(np.abs(gradient(x[live])))) if np.any(live) else 0.0)
        result.times.append(float(target))
        result.ensembles.append(ensemble.moved(x.copy(), p.copy(), float(target), frozen.copy()))
    result.step = h
    result.energy_drift = drift
    # leapfrog keeps energy within O(h^2 (Lip |p|^2 + |grad U|^2)) of its start
    field_bound = 1.0 + gradient.lipschitz * peak_p ** 2 + peak_force ** 2
    result.energy_bound = 10 * h ** 2 * max(plan.horizon, 1.0) * field_bound
    if not result.energy_ok:
        message = f"energy drift {drift:.3e} exceeds {result.energy_bound:.3e}"
        logging.warning(message)
        result.warnings.append(message)
    excluded = result.excluded_mass
    if excluded >= settings.EXCLUDED_MASS_TOLERANCE:
        message = f"excluded mass {excluded:.3e} invalidates the run"
        logging.warning(message)
        result.warnings.append(message)
    return result


def push_forward_density(ensemble: ParticleEnsemble, lattice: PhaseLattice,
                         bandwidth: Optional[float] = None) -> PhaseField:
    """
    Kernel-density reconstruction: weights scattered into lattice cells in
    particle order, then a Gaussian of standard deviation `bandwidth`.
    """
    spacings = np.array(lattice.spacings)
    bandwidth = 2.0 * float(spacings.max()) if bandwidth is None else bandwidth
    if bandwidth < float(spacings.min()):
        logging.warning(f"bandwidth {bandwidth:.3g} is below the lattice spacing {spacings.min():.3g}")
    points = ensemble.phase_points()
    axes = lattice.x_axes + lattice.p_axes
    index = np.stack([np.floor((points[:, a] - (axis[0] - 0.5 * s)) / s).astype(int)
                      for a, (axis, s) in enumerate(zip(axes, spacings))], axis=1)
    inside = np.all((index >= 0) & (index < np.array(lattice.shape)), axis=1)
    outside_mass = float(np.sum(ensemble.weights[~inside]))
    if outside_mass > settings.BOUNDARY_MASS_TOLERANCE:
        logging.warning(f"{outside_mass:.3e} of the particle mass lies outside the reconstruction lattice")
    counts = np.zeros(lattice.shape)
    np.add.at(counts, tuple(index[inside].T), ensemble.weights[inside])
    smoothed = scipy.ndimage.gaussian_filter(counts, sigma=bandwidth / spacings, mode="constant", truncate=6.0)
    values = smoothed / lattice.cell_volume
    # kernel mass that spills past the lattice edge is dropped, never wrapped
    edge_mass = max(1.0 - outside_mass - float(smoothed.sum()), 0.0)
    return PhaseField(lattice, values, "classical", mass=float(smoothed.sum()),
                      metadata={"bandwidth": bandwidth, "outside_mass": outside_mass, "edge_mass": edge_mass,
                                "t": ensemble.t})


def _simplex_jacobian(integrator: LeapfrogIntegrator, x: np.ndarray, p: np.ndarray, h: float,
                      eta: float) -> np.ndarray:
    """
    Jacobian of one step at z = (x, p) read off the images of the probe
    vertices z +- eta e_k, Richardson-extrapolated in eta.
    """
    n = x.size
    z = np.concatenate([x, p])

    def differences(scale: float) -> np.ndarray:
        offsets = scale * np.eye(2 * n)
        vertices = np.concatenate([z + offsets, z - offsets])
        fx, fp = integrator.step(vertices[:, :n], vertices[:, n:], h)
        images = np.concatenate([fx, fp], axis=1)
        return ((images[:2 * n] - images[2 * n:]) / (2 * scale)).T

    return (4 * differences(eta / 2) - differences(eta)) / 3


def measure_preservation_audit(result: FlowResult, potential: PotentialSpec, probes: int = 16,
                               cells_per_axis: int = 10, particles_per_cell: int = 400,
                               source: Optional[PhaseField] = None, lattice: Optional[PhaseLattice] = None,
                               seed: Optional[int] = None, halfwidth: float = 8.0,
                               integrator: Optional[LeapfrogIntegrator] = None) -> Report:
    """
    (a) Jacobian determinant of one step of `integrator` (leapfrog on the
    mollified gradient by default) on probe simplices around sampled
    particles; (b) the compression constant C_T of uniform phase-space
    cells carried by the flow.
    """
    plan = result.plan
    report = Report(name="measure_preservation")
    if integrator is None:
        integrator = LeapfrogIntegrator(mollified_gradient(potential, plan.delta, halfwidth=halfwidth))
    rng = np.random.default_rng(settings.DEFAULT_SEED if seed is None else seed)
    start = result.ensembles[0]
    live = ~start.frozen
    picks = rng.choice(np.nonzero(live)[0], size=min(probes, int(live.sum())), replace=False)
    n = start.dim
    # the vertex spread stays well inside the mollification scale
    eta = 1e-3 * min(1.0, plan.delta)
    volume = 0.0
    for i in picks:
        jacobian = _simplex_jacobian(integrator, start.x[i], start.p[i], result.step, eta)
        volume = max(volume, abs(float(np.linalg.det(jacobian)) - 1.0))
    report.constants["eta"] = eta
    report.add("jacobian_simplex", volume, bound=settings.VOLUME_TOLERANCE)

    points = start.phase_points()[live]
    lo, hi = points.min(axis=0), points.max(axis=0)
    per_axis = max(2, int(round((cells_per_axis ** (2 * n) * particles_per_cell) ** (1.0 / (2 * n)))))
    axes = [lo[a] + (np.arange(per_axis) + 0.5) * (hi[a] - lo[a]) / per_axis for a in range(2 * n)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2 * n)
    if potential.has_singular:
        grid = grid[potential.singular_set.distance(grid[:, :n]) > max(plan.r_min, 1e-9)]
    uniform = ParticleEnsemble(grid[:, :n].copy(), grid[:, n:].copy(), np.full(len(grid), 1.0 / len(grid)),
                               source="uniform_cells")
    carried = flow(uniform, replace(plan, record_interval=None), potential, halfwidth=halfwidth).final()
    cell = (hi - lo) / cells_per_axis
    expected = len(grid) / cells_per_axis ** (2 * n)
    moved = carried.phase_points()[~carried.frozen]
    index = np.floor((moved - moved.min(axis=0)) / cell).astype(int)
    _, counts = np.unique(index, axis=0, return_counts=True)
    compression = float(counts.max() / expected)
    report.constants.update({"C_T": compression, "cell_particles": expected, "step": result.step})
    report.add("compression_constant", compression, note="max pushed cell mass over a full initial cell")

    if source is not None and lattice is not None:
        initial = push_forward_density(start, lattice)
        final = push_forward_density(result.final(), lattice)
        scale = float(np.max(np.real(source.values)))
        error = float(np.max(np.abs(initial.values - np.real(source.values)))) / scale
        report.constants["reconstruction_error"] = error
        report.add("linf_preserved", float(np.max(final.values)), bound=scale * compression * (1 + 3 * error))
    else:
        report.note("L-infinity preservation skipped: no source density given")
    return report


def rlf_stability(ensemble: ParticleEnsemble, potential: PotentialSpec, deltas: Sequence[float], horizon: float,
                  lattice: PhaseLattice, step: float = 0.01, r_min: float = 0.0,
                  dictionary: Optional[TestFunctionDictionary] = None, halfwidth: float = 8.0) -> Report:
    """
    Flow the same particles at every mollification scale and compare the
    push-forwards at the horizon in d_P. Successive distances should shrink
    with delta; when they do not the run is flagged as sitting at a
    non-uniqueness configuration.
    """
    deltas = sorted((float(d) for d in deltas), reverse=True)
    if len(deltas) < 2:
        raise ParameterError("a stability sweep needs at least two mollification scales")
    dictionary = dictionary or TestFunctionDictionary(lattice)
    report = Report(name="rlf_stability")
    fields = []
    for delta in deltas:
        result = flow(ensemble, FlowPlan(delta, step, horizon, r_min), potential, halfwidth=halfwidth)
        fields.append(push_forward_density(result.final(), lattice))
        report.constants[f"excluded_mass[delta={delta:g}]"] = result.excluded_mass
    successive = []
    for (d1, f1), (d2, f2) in zip(zip(deltas, fields), zip(deltas[1:], fields[1:])):
        distance = dP(f1, f2, dictionary)
        successive.append(distance)
        report.constants[f"dP[{d1:g},{d2:g}]"] = distance
    for (i, fi), (j, fj) in itertools.combinations(enumerate(fields), 2):
        if j > i + 1:
            report.constants[f"dP[{deltas[i]:g},{deltas[j]:g}]"] = dP(fi, fj, dictionary)
    cauchy = is_nonincreasing(successive, tolerance=1e-12)
    report.constants["cauchy"] = float(cauchy)
    report.constants["rate"] = order_fit(deltas[:-1], successive)
    report.constants["K_total"] = float(dictionary.size)
    if not cauchy:
        message = "successive push-forwards do not contract with delta; possible non-uniqueness configuration"
        logging.warning(message)
        report.note(message)
    report.note(f"seed {ensemble.seed}, d_P truncated at K_total={dictionary.size}")
    return report
