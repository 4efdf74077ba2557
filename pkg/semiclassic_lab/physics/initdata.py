"""
Initial-data factories: averages of semiclassical Hermite functions,
Toeplitz averages of windowed plane waves, finite coherent mixtures, the
analytic limit densities they are compared against, and the validators of
the hypotheses placed on initial data.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, Literal, Optional, Sequence, Tuple, Type

import numpy as np
import scipy.special

from semiclassic_lab.config import settings
from semiclassic_lab.errors import ConfigurationError, ParameterError, ResolutionError
from semiclassic_lab.models.report import Report
from semiclassic_lab.physics.grid import PhaseField, PhaseLattice, SpaceGrid
from semiclassic_lab.physics.metrics import dP, tightness_profile
from semiclassic_lab.physics.phase_space import husimi
from semiclassic_lab.physics.potentials import PotentialSpec
from semiclassic_lab.physics.states import (
    MixedState,
    coherent_family,
    disop_constant,
    kinetic_terms,
    observable_expectation,
    spectral_norm,
)

_RESCALE = 1e100


class Target(ABC):
    """Analytic limit density on R^{2n}, tabulated as exact or pointwise cell masses."""

    name: str = ""

    def __init__(self, dim: int):
        if dim < 1:
            raise ParameterError(f"target dimension must be positive, got {dim}")
        self.dim = dim

    @abstractmethod
    def density(self, x: Sequence[np.ndarray], p: Sequence[np.ndarray]) -> np.ndarray:
        pass

    @abstractmethod
    def sup(self) -> float:
        pass

    def cell_masses(self, lattice: PhaseLattice) -> np.ndarray:
        mesh = lattice.mesh()
        values = self.density(mesh[:lattice.dim], mesh[lattice.dim:])
        return np.broadcast_to(values, lattice.shape) * lattice.cell_volume

    def tabulate(self, lattice: PhaseLattice) -> PhaseField:
        if lattice.dim != self.dim:
            raise ParameterError(f"lattice dimension {lattice.dim} does not match target {self.dim}")
        masses = self.cell_masses(lattice)
        captured = float(masses.sum())
        if abs(captured - 1.0) > settings.MASS_MISMATCH_TOLERANCE:
            logging.warning(f"target '{self.name}' keeps mass {captured:.8f} on the lattice")
        return PhaseField(lattice, masses / lattice.cell_volume, "classical", mass=captured,
                          metadata={"target": self.name})

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim}


def _axis_cell_masses(axis: np.ndarray, cdf) -> np.ndarray:
    h = axis[1] - axis[0]
    return cdf(axis + h / 2) - cdf(axis - h / 2)


class GaussianTarget(Target):
    name = "gaussian"

    def __init__(self, dim: int, width: float = 0.5, center: Sequence[float] = ()):
        super().__init__(dim)
        if not width > 0:
            raise ParameterError(f"target width must be positive, got {width}")
        self.width = width
        self.center = np.zeros(2 * dim) if len(center) == 0 else np.asarray(center, dtype=float)
        if self.center.shape != (2 * dim,):
            raise ParameterError(f"target center needs {2 * dim} coordinates")

    def density(self, x, p):
        coords = list(x) + list(p)
        r2 = sum((c - m) ** 2 for c, m in zip(coords, self.center))
        return np.exp(-r2 / (2 * self.width ** 2)) / (2 * np.pi * self.width ** 2) ** self.dim

    def sup(self) -> float:
        return (2 * np.pi * self.width ** 2) ** (-self.dim)

    def cell_masses(self, lattice):
        factors = []
        for axis, m in zip(lattice.x_axes + lattice.p_axes, self.center):
            cdf = lambda t, m=m: 0.5 * (1 + scipy.special.erf((t - m) / (np.sqrt(2) * self.width)))
            factors.append(_axis_cell_masses(axis, cdf))
        return _outer(factors)

    def describe(self):
        return {**super().describe(), "width": self.width, "center": self.center.tolist()}


class UniformBox(Target):
    name = "uniform_box"

    def __init__(self, dim: int, halfwidth: float = 1.0, center: Sequence[float] = ()):
        super().__init__(dim)
        if not halfwidth > 0:
            raise ParameterError(f"box halfwidth must be positive, got {halfwidth}")
        self.halfwidth = halfwidth
        self.center = np.zeros(2 * dim) if len(center) == 0 else np.asarray(center, dtype=float)

    def density(self, x, p):
        coords = list(x) + list(p)
        inside = np.logical_and.reduce([np.abs(c - m) <= self.halfwidth for c, m in zip(coords, self.center)])
        return inside * self.sup()

    def sup(self) -> float:
        return (2 * self.halfwidth) ** (-2 * self.dim)

    def cell_masses(self, lattice):
        factors = []
        for axis, m in zip(lattice.x_axes + lattice.p_axes, self.center):
            cdf = lambda t, m=m: np.clip((t - m + self.halfwidth) / (2 * self.halfwidth), 0.0, 1.0)
            factors.append(_axis_cell_masses(axis, cdf))
        return _outer(factors)

    def describe(self):
        return {**super().describe(), "halfwidth": self.halfwidth, "center": self.center.tolist()}


class Annulus(Target):
    """Gaussian profile in x^2 + p^2 around `radius_sq`, the limit of Hermite bands."""
    name = "annulus"

    def __init__(self, dim: int = 1, radius_sq: float = 1.0, width: float = 0.1):
        super().__init__(dim)
        if dim != 1:
            raise ParameterError("the annulus target lives in the one-dimensional phase plane")
        if not width > 0 or radius_sq < 0:
            raise ParameterError(f"annulus needs radius_sq >= 0 and width > 0, got {radius_sq}, {width}")
        self.radius_sq = radius_sq
        self.width = width
        # area element dx dp = pi d(r^2)
        self.normalization = np.pi * width * np.sqrt(np.pi / 2) * (1 + scipy.special.erf(radius_sq / (np.sqrt(2) * width)))

    def density(self, x, p):
        s = x[0] ** 2 + p[0] ** 2
        return np.exp(-(s - self.radius_sq) ** 2 / (2 * self.width ** 2)) / self.normalization

    def sup(self) -> float:
        return 1.0 / self.normalization

    def describe(self):
        return {**super().describe(), "radius_sq": self.radius_sq, "width": self.width}


class HeavyTail(Target):
    """Gaussian in x, (1 + |p|^2)^-(n+3)/2 in p: finite mass, divergent fourth moment."""
    name = "heavy_tail"

    def __init__(self, dim: int, width: float = 0.5):
        super().__init__(dim)
        self.width = width
        power = (dim + 3) / 2
        self.p_normalization = np.pi ** (dim / 2) * scipy.special.gamma(power - dim / 2) / scipy.special.gamma(power)
        self.power = power

    def density(self, x, p):
        r2 = sum(c ** 2 for c in x)
        q2 = sum(c ** 2 for c in p)
        gauss = np.exp(-r2 / (2 * self.width ** 2)) / (2 * np.pi * self.width ** 2) ** (self.dim / 2)
        return gauss * (1 + q2) ** (-self.power) / self.p_normalization

    def sup(self) -> float:
        return (2 * np.pi * self.width ** 2) ** (-self.dim / 2) / self.p_normalization


def _outer(factors):
    result = factors[0]
    for f in factors[1:]:
        result = np.multiply.outer(result, f)
    return result


TARGETS: Dict[str, Type[Target]] = {
    cls.name: cls for cls in (GaussianTarget, UniformBox, Annulus, HeavyTail)
}


def make_target(dim: int, name: str, params: Optional[dict] = None) -> Target:
    if name not in TARGETS:
        raise ConfigurationError(f"unknown target '{name}', catalog has {sorted(TARGETS)}")
    try:
        return TARGETS[name](dim, **(params or {}))
    except TypeError as e:
        raise ConfigurationError(f"bad parameters for target '{name}': {e}") from e


def moment_growth(target: Target, radius: float = 8.0, points: Optional[int] = None) -> Tuple[float, float]:
    """
    int |p|^4 target over |p| <= R and over |p| <= 2R (x integrated on a
    fixed box). A finite moment barely moves between the two.
    """
    n = target.dim
    points = points or {1: 129, 2: 33}.get(n, 11)
    values = []
    for R in (radius, 2 * radius):
        lattice = PhaseLattice.uniform(n, radius, R, points)
        mesh = lattice.mesh()
        p4 = sum(q ** 2 for q in mesh[n:]) ** 2
        values.append(float(np.sum(target.density(mesh[:n], mesh[n:]) * p4) * lattice.cell_volume))
    return values[0], values[1]


def singular_distance_moment(target: Target, potential: PotentialSpec, lattice: PhaseLattice) -> float:
    """int target / dist(x, S)^2 over cells off S."""
    field_ = target.tabulate(lattice)
    n = lattice.dim
    mesh = np.meshgrid(*lattice.x_axes, indexing="ij")
    points = np.stack(mesh, axis=-1)
    distance = potential.singular_set.distance(points)
    with np.errstate(divide="ignore"):
        weight = np.where(distance > 0, distance ** -2.0, 0.0)
    x_mass = np.sum(field_.values, axis=tuple(range(n, 2 * n))) * np.prod(lattice.spacings[n:])
    return float(np.sum(weight * x_mass) * np.prod(lattice.spacings[:n]))


def hermite_functions(grid: SpaceGrid, eps: float, indices: Sequence[int]) -> np.ndarray:
    """
    eps^(-1/4) h_j(x / sqrt(eps)) for the requested j by the three-term
    recurrence, carried with a per-point log scale so that high orders do
    not underflow in the Gaussian tails.
    """
    if grid.dim != 1:
        raise ParameterError("Hermite functions are built on one-dimensional grids")
    indices = np.asarray(sorted(set(int(j) for j in indices)))
    if indices.size == 0 or indices[0] < 0:
        raise ParameterError("Hermite indices must be nonnegative")
    s = grid.axis / np.sqrt(eps)
    log_scale = -0.5 * s ** 2 - 0.25 * np.log(np.pi)
    previous, current = np.zeros_like(s), np.ones_like(s)
    wanted = {int(j): i for i, j in enumerate(indices)}
    out = np.zeros((indices.size, s.size))
    for m in range(int(indices[-1]) + 1):
        if m == 1:
            previous, current = current, np.sqrt(2.0) * s * current
        elif m > 1:
            previous, current = current, np.sqrt(2.0 / m) * s * current - np.sqrt((m - 1.0) / m) * previous
        big = np.abs(current) > _RESCALE
        if np.any(big):
            current[big] /= _RESCALE
            previous[big] /= _RESCALE
            log_scale[big] += np.log(_RESCALE)
        if m in wanted:
            out[wanted[m]] = current * np.exp(log_scale)
    return out / eps ** 0.25


@dataclass(frozen=True)
class HermiteSpec:
    """
    Weights over the semiclassical Hermite basis. Mode j concentrates on the
    circle x^2 + p^2 = eps (2j + 1), so bands are placed by `radius_sq`.
    """
    eps: float
    rule: Literal["uniform_band", "smoothed_band", "single"] = "uniform_band"
    radius_sq: float = 1.0
    width: float = 0.5
    index: int = 0
    truncation: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ParameterError(f"semiclassical parameter must lie in (0, 1), got {self.eps}")
        if self.rule != "single" and not self.width > 0:
            raise ParameterError(f"band width must be positive, got {self.width}")

    def weights(self) -> Tuple[np.ndarray, np.ndarray]:
        """(indices, weights) with the weights summing to one."""
        if self.rule == "single":
            return np.array([self.index]), np.ones(1)
        levels = lambda j: self.eps * (2 * j + 1)
        top = self.truncation
        if top is None:
            reach = self.width if self.rule == "uniform_band" else 9 * self.width
            top = int(np.floor(((self.radius_sq + reach) / self.eps - 1) / 2))
        j = np.arange(max(top, 0) + 1)
        if self.rule == "uniform_band":
            mu = (np.abs(levels(j) - self.radius_sq) <= self.width).astype(float)
        elif self.rule == "smoothed_band":
            mu = np.exp(-(levels(j) - self.radius_sq) ** 2 / (2 * self.width ** 2))
            mu[mu < 1e-16 * mu.max()] = 0.0
        else:
            raise ConfigurationError(f"unknown Hermite weight rule '{self.rule}'")
        keep = mu > 0
        if not np.any(keep):
            raise ParameterError(f"Hermite band around {self.radius_sq} holds no level at eps={self.eps}")
        return j[keep], mu[keep] / mu[keep].sum()

    def constants(self) -> Dict[str, float]:
        j, mu = self.weights()
        return {
            "weight_constant": float(mu.max() / self.eps),
            "second_moment": float(self.eps ** 2 * np.sum(mu * j ** 2)),
            "top_index": float(j.max()),
            "levels": float(j.size),
        }


def build_hermite(spec: HermiteSpec, grid: SpaceGrid) -> MixedState:
    j, mu = spec.weights()
    top = int(j.max())
    turning = np.sqrt(spec.eps * (2 * top + 1))
    if turning > 0.8 * grid.halfwidth:
        raise ParameterError(
            f"Hermite level {top} turns at {turning:.3g}, beyond 0.8 L = {0.8 * grid.halfwidth:.3g}"
        )
    if turning / spec.eps > 0.8 * np.pi / grid.spacing:
        raise ResolutionError(f"grid spacing {grid.spacing:.3g} does not resolve Hermite level {top}")
    modes = hermite_functions(grid, spec.eps, j).astype(complex)
    state = MixedState(grid, spec.eps, mu, modes, label=f"hermite:{spec.rule}").validate()
    constants = spec.constants()
    logging.info(f"Hermite state: {j.size} levels up to j={top}, mu/eps <= {constants['weight_constant']:.3g}")
    return state


def window_profile(kind: str, z: np.ndarray) -> np.ndarray:
    """L2-normalized one-dimensional window: a Gaussian or the C^2 bump (1 - z^2)^3."""
    if kind == "gaussian":
        return np.pi ** -0.25 * np.exp(-0.5 * z ** 2)
    if kind == "bump":
        norm = np.sqrt(scipy.special.beta(0.5, 7.0))
        return np.where(np.abs(z) < 1, (1 - np.clip(z ** 2, 0, 1)) ** 3, 0.0) / norm
    raise ConfigurationError(f"unknown window '{kind}', expected 'gaussian' or 'bump'")


def window_h2_norm(kind: str, points: int = 8193, halfwidth: float = 12.0) -> float:
    z = np.linspace(-halfwidth, halfwidth, points)
    h = z[1] - z[0]
    f = window_profile(kind, z)
    d1 = np.gradient(f, h)
    d2 = np.gradient(d1, h)
    return float(np.sqrt(np.sum(f ** 2 + d1 ** 2 + d2 ** 2) * h))


@dataclass(frozen=True)
class ToeplitzSpec:
    """
    rho = int chi(q, w) |psi_{w,q}><psi_{w,q}| dw dq with
    psi_{w,q}(x) = s^(-n/2) phi((x - q) / s) e^{i w.x / eps} and s = eps^alpha.
    """
    eps: float
    target: Target
    window: Literal["gaussian", "bump"] = "gaussian"
    alpha: float = 0.5
    refinement: float = 1.0
    cutoff: float = 1e-14
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ParameterError(f"semiclassical parameter must lie in (0, 1), got {self.eps}")
        if not 0 < self.alpha < 1:
            raise ParameterError(f"window exponent must lie in (0, 1), got {self.alpha}")

    @property
    def window_width(self) -> float:
        return self.eps ** self.alpha

    def spacings(self) -> Tuple[float, float]:
        """(q spacing, w spacing); both are sqrt(eps)/2 at alpha = 1/2."""
        s = self.window_width
        return s / 2 / self.refinement, self.eps / (2 * s) / self.refinement


def _toeplitz_cells(spec: ToeplitzSpec, grid: SpaceGrid) -> Tuple[np.ndarray, np.ndarray]:
    n = grid.dim
    dq, dw = spec.spacings()
    q_axis = -grid.halfwidth + (np.arange(int(round(2 * grid.halfwidth / dq))) + 0.5) * dq
    w_reach = spec.eps * np.pi / grid.spacing
    w_axis = (np.arange(-int(w_reach / dw), int(w_reach / dw) + 1)) * dw
    lattice = PhaseLattice(tuple([q_axis] * n), tuple([w_axis] * n))
    masses = spec.target.cell_masses(lattice)
    keep = masses > spec.cutoff * masses.max()
    index = np.nonzero(keep)
    centers = np.stack([axis[i] for axis, i in zip(lattice.x_axes + lattice.p_axes, index)], axis=-1)
    return centers, masses[keep]


def toeplitz_family(spec: ToeplitzSpec, grid: SpaceGrid, centers: np.ndarray) -> np.ndarray:
    """psi_{w,q} on the grid for centers (R, 2n) given as (q, w)."""
    if spec.window == "gaussian" and abs(spec.alpha - 0.5) < 1e-15:
        return coherent_family(grid, centers, spec.eps)
    n, s = grid.dim, spec.window_width
    family = np.ones((centers.shape[0],) + grid.shape, dtype=complex)
    for axis in range(n):
        q = centers[:, axis][:, None]
        w = centers[:, n + axis][:, None]
        factor = window_profile(spec.window, (grid.axis[None] - q) / s) / np.sqrt(s)
        factor = factor * np.exp(1j * w * grid.axis[None] / spec.eps)
        shape = [centers.shape[0]] + [1] * n
        shape[1 + axis] = grid.points
        family = family * factor.reshape(shape)
    return family


def build_toeplitz(spec: ToeplitzSpec, grid: SpaceGrid) -> MixedState:
    """
    Discretize the Toeplitz average on a (q, w) lattice and bring it to
    spectral form. A lattice whose rank-R sum misses unit trace by more
    than 1e-6 is refused; otherwise the trace is renormalized.
    """
    if spec.target.dim != grid.dim:
        raise ParameterError(f"target dimension {spec.target.dim} does not match grid {grid.dim}")
    centers, masses = _toeplitz_cells(spec, grid)
    vectors = toeplitz_family(spec, grid, centers)
    norms = np.sum(np.abs(vectors.reshape(len(centers), -1)) ** 2, axis=1) * grid.cell_volume
    raw_trace = float(np.sum(masses * norms))
    if abs(raw_trace - 1.0) > 1e-6:
        raise ResolutionError(
            f"Toeplitz lattice gives trace {raw_trace:.8f}; refine the (q, w) lattice "
            f"(try refinement={2 * spec.refinement:g}) or widen the box"
        )
    state = MixedState.from_vectors(grid, spec.eps, vectors, masses, label=f"toeplitz:{spec.target.name}",
                                    normalize=True)
    logging.info(f"Toeplitz state from {len(centers)} cells, rank {state.rank}, raw trace {raw_trace:.10f}")
    return state


def toeplitz_bound_report(spec: ToeplitzSpec, state: MixedState) -> Report:
    """Top eigenvalue against (2 pi)^n eps^n sup chi."""
    report = Report(name="toeplitz_bound")
    n = state.dim
    bound = (2 * np.pi * spec.eps) ** n * spec.target.sup()
    top = spectral_norm(state)
    report.constants.update({
        "chi_sup": spec.target.sup(),
        "window_h2": window_h2_norm(spec.window),
        "window_width": spec.window_width,
    })
    report.add("top_eigenvalue", top, bound=bound * (1 + 1e-6))
    report.add("trace", abs(float(np.sum(state.weights)) - 1.0), bound=1e-8)
    return report


def coherent_mixture(grid: SpaceGrid, eps: float, centers: Sequence[Sequence[float]],
                     weights: Optional[Sequence[float]] = None, label: str = "coherent_mixture") -> MixedState:
    """Finite average of coherent projectors in spectral form."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2 * grid.dim)
    weights = np.full(len(centers), 1.0 / len(centers)) if weights is None else np.asarray(weights, dtype=float)
    if abs(float(weights.sum()) - 1.0) > settings.TRACE_TOLERANCE:
        raise ParameterError(f"mixture weights sum to {float(weights.sum())!r}")
    vectors = coherent_family(grid, centers, eps)
    return MixedState.from_vectors(grid, eps, vectors, weights, label=label, normalize=True).validate()


def validate_assumptions(state: MixedState, potential: PotentialSpec, target: Optional[Target] = None,
                         radii: Sequence[float] = (1.0, 2.0, 4.0, 8.0), disop_bound: Optional[float] = None,
                         husimi_field: Optional[PhaseField] = None) -> Report:
    """
    The hypotheses on initial data, measured: the H^2 sum, the operator
    bound rho <= C eps^n, tightness of the Husimi transform, and (with a
    target) the target's moment conditions and its distance to the Husimi
    transform.
    """
    report = Report(name="assumptions")
    disop_bound = settings.DISOP_BOUND if disop_bound is None else disop_bound
    h2 = observable_expectation(state, "H_squared_vector", potential)
    report.add("h2_sum", h2, note="sum_j mu_j ||H phi_j||^2")
    report.add("disop", disop_constant(state), bound=disop_bound)

    p2 = float(np.sum(state.weights * kinetic_terms(state)))
    profile = tightness_profile(state, radii, p2_moment=p2)
    report.add("tightness_monotone", float(not profile.monotone), bound=0.0)
    report.add("tightness_p_bound", float(not profile.p_bound_holds()), bound=0.0)
    report.constants.update({f"outside[R={r:g}]": v for r, v in zip(profile.radii, profile.outside)})

    if target is None:
        report.note("no limit density named: moment and distance checks skipped")
        return report
    inner, outer = moment_growth(target)
    growth = (outer - inner) / max(inner, 1e-300)
    report.constants.update({"p4_moment": inner, "p4_moment_wide": outer})
    report.add("p4_moment_growth", growth, bound=settings.MOMENT_GROWTH_TOLERANCE)
    if potential.has_singular:
        lattice = PhaseLattice.uniform(state.dim, state.grid.halfwidth, 8.0, 64 if state.dim == 1 else 16)
        report.add("singular_distance_moment", singular_distance_moment(target, potential, lattice))
    else:
        report.note("empty singular set: the inverse-square distance term is vacuous")
    if state.dim == 1:
        husimi_field = husimi_field or husimi(state)
        lattice = husimi_field.lattice
        reference = target.tabulate(lattice)
        candidate = husimi_field.with_values(np.clip(np.real(husimi_field.values), 0.0, None), tag="classical")
        scale = reference.integral() / max(candidate.integral(), 1e-300)
        distance = dP(candidate.with_values(candidate.values * scale), reference)
        report.constants["dP_to_target"] = distance
    else:
        report.note("Husimi distance to the target is measured in one dimension only")
    return report
