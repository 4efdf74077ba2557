"""
The potential class U = U_b + U_s: a bounded rough part from a small catalog
and a repulsive Coulomb-type singular part with its singular set.

Points are arrays of shape (..., n); a single point may be passed as (n,).
"""
from __future__ import annotations

import itertools
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Type

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import erf

from semiclassic_lab.errors import ConfigurationError, ParameterError, SingularityError
from semiclassic_lab.models.report import Report
from semiclassic_lab.physics.grid import SpaceGrid

# Gauss-Hermite orders used by the generic mollifier, by dimension
_HERMITE_ORDER = {1: 32, 2: 16, 3: 8}


def _as_points(x, dim: int) -> Tuple[np.ndarray, str]:
    """
    Normalize to shape (..., n). Modes: "single" for one point, "flat" for a
    1-D array of points in one dimension, "array" otherwise.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        if dim != 1:
            raise ParameterError(f"scalar point given to a {dim}-dimensional potential")
        return x.reshape(1, 1), "single"
    if x.ndim == 1 and dim == 1:
        return x[:, None], "flat"
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ParameterError(f"point has {x.shape[0]} coordinates, potential has {dim}")
        return x[None, :], "single"
    if x.shape[-1] != dim:
        raise ParameterError(f"points have trailing dimension {x.shape[-1]}, potential has {dim}")
    return x, "array"


def _restore_scalar(values: np.ndarray, mode: str):
    return float(values.reshape(-1)[0]) if mode == "single" else values


def _restore_vector(values: np.ndarray, mode: str, dim: int):
    if mode == "single":
        return values.reshape(-1, dim)[0]
    if mode == "flat":
        return values[..., 0]
    return values


def _center(center, dim: int) -> np.ndarray:
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float).reshape(-1)
    if c.size == 1 and dim > 1:
        c = np.full(dim, float(c[0]))
    if c.size != dim:
        raise ParameterError(f"center {center} does not match dimension {dim}")
    return c


def _piecewise_linear_mollified(t: np.ndarray, delta: float, kinks_between: Callable,
                                slope_at: Callable) -> np.ndarray:
    """
    Exact Gaussian mollification of a piecewise-constant slope:
    s_left + sum_k J_k (1 + erf((t - t_k)/delta)) / 2.
    """
    lo, hi = float(np.min(t)) - 10 * delta, float(np.max(t)) + 10 * delta
    kinks = np.asarray(kinks_between(lo, hi), dtype=float)
    if kinks.size == 0:
        return slope_at(np.full_like(t, lo))
    gaps = np.diff(np.concatenate([[lo], kinks, [hi]]))
    mids = np.concatenate([[lo], kinks]) + 0.5 * gaps
    slopes = slope_at(mids)
    jumps = np.diff(slopes)
    result = np.full_like(t, slopes[0], dtype=float)
    for t_k, jump in zip(kinks, jumps):
        result = result + 0.5 * jump * (1.0 + erf((t - t_k) / delta))
    return result


class RoughPotential(ABC):
    """
    Catalog entry for the bounded part U_b. Subclasses register themselves
    under `name` and take their parameters as keyword arguments.
    """
    name: str = ""
    smooth: bool = False
    globally_bounded: bool = True

    def __init__(self, dim: int):
        self.dim = dim

    @abstractmethod
    def value(self, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def gradient(self, x: np.ndarray) -> np.ndarray:
        ...

    def kink_mask(self, x: np.ndarray) -> np.ndarray:
        return np.zeros(x.shape[:-1], dtype=bool)

    def laplacian(self, x: np.ndarray) -> Optional[np.ndarray]:
        return None

    def mollified_gradient(self, x: np.ndarray, delta: float) -> np.ndarray:
        """Gauss-Hermite evaluation of E[grad U(x + delta xi)], xi ~ exp(-|xi|^2)."""
        order = _HERMITE_ORDER.get(self.dim, 6)
        nodes, weights = hermgauss(order)
        weights = weights / np.sqrt(np.pi)
        result = np.zeros_like(x, dtype=float)
        for index in itertools.product(range(order), repeat=self.dim):
            shift = delta * nodes[list(index)]
            weight = np.prod(weights[list(index)])
            result += weight * self.gradient(x + shift)
        return result

    def describe(self) -> dict:
        params = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                  for k, v in self.__dict__.items() if k != "dim"}
        return {"name": self.name, **params}


CATALOG: Dict[str, Type[RoughPotential]] = {}


def register(cls: Type[RoughPotential]) -> Type[RoughPotential]:
    CATALOG[cls.name] = cls
    return cls


@register
class ZeroPotential(RoughPotential):
    name = "zero"
    smooth = True

    def value(self, x):
        return np.zeros(x.shape[:-1])

    def gradient(self, x):
        return np.zeros_like(x, dtype=float)

    def laplacian(self, x):
        return np.zeros(x.shape[:-1])

    def mollified_gradient(self, x, delta):
        return np.zeros_like(x, dtype=float)


@register
class AbsoluteValue(RoughPotential):
    """a |x - c|"""
    name = "absolute_value"

    def __init__(self, dim: int, a: float = 1.0, center=None):
        super().__init__(dim)
        self.a = float(a)
        self.center = _center(center, dim)

    def value(self, x):
        return self.a * np.linalg.norm(x - self.center, axis=-1)

    def gradient(self, x):
        diff = x - self.center
        r = np.linalg.norm(diff, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(r > 0, self.a * diff / np.where(r > 0, r, 1.0), 0.0)
        return g

    def kink_mask(self, x):
        return np.linalg.norm(x - self.center, axis=-1) == 0

    def mollified_gradient(self, x, delta):
        if self.dim == 1:
            return self.a * erf((x - self.center) / delta)
        return super().mollified_gradient(x, delta)


@register
class SmoothedWell(RoughPotential):
    """-depth exp(-|x - c|^2 / width^2)"""
    name = "smoothed_well"
    smooth = True

    def __init__(self, dim: int, depth: float = 1.0, width: float = 1.0, center=None):
        super().__init__(dim)
        if width <= 0:
            raise ParameterError(f"well width must be positive, got {width}")
        self.depth = float(depth)
        self.width = float(width)
        self.center = _center(center, dim)

    def _bump(self, x):
        return np.exp(-np.sum((x - self.center) ** 2, axis=-1) / self.width ** 2)

    def value(self, x):
        return -self.depth * self._bump(x)

    def gradient(self, x):
        return (2.0 * self.depth / self.width ** 2) * (x - self.center) * self._bump(x)[..., None]

    def laplacian(self, x):
        r2 = np.sum((x - self.center) ** 2, axis=-1)
        w2 = self.width ** 2
        return (2.0 * self.depth / w2) * (self.dim - 2.0 * r2 / w2) * self._bump(x)


@register
class Sawtooth(RoughPotential):
    """
    Triangle wave on each axis: slope +-s alternating on segments of length
    `segment`, kinks at odd multiples of segment/2, U(0) = 0.
    """
    name = "sawtooth"

    def __init__(self, dim: int, slope: float = 1.0, segment: float = 2.0):
        super().__init__(dim)
        if segment <= 0:
            raise ParameterError(f"sawtooth segment must be positive, got {segment}")
        self.slope = float(slope)
        self.segment = float(segment)

    def _phase(self, t):
        return np.mod(t + self.segment / 2.0, 2.0 * self.segment)

    def _axis_value(self, t):
        return self.slope * (self.segment / 2.0 - np.abs(self._phase(t) - self.segment))

    def _axis_slope(self, t):
        phase = self._phase(t)
        # a kink at phase 0 or phase == segment gets the midpoint slope 0
        return np.where(phase == 0, 0.0, -self.slope * np.sign(phase - self.segment))

    def _axis_kinks(self, lo, hi):
        half = self.segment / 2.0
        first = int(np.ceil((lo / half - 1.0) / 2.0))
        last = int(np.floor((hi / half - 1.0) / 2.0))
        return [(2 * j + 1) * half for j in range(first, last + 1)]

    def value(self, x):
        return np.sum(self._axis_value(x), axis=-1)

    def gradient(self, x):
        return self._axis_slope(x)

    def kink_mask(self, x):
        phase = self._phase(x)
        return np.any(np.isclose(phase, self.segment, rtol=0, atol=1e-12) | np.isclose(phase, 0.0, rtol=0, atol=1e-12), axis=-1)

    def mollified_gradient(self, x, delta):
        result = np.empty_like(x, dtype=float)
        for axis in range(self.dim):
            result[..., axis] = _piecewise_linear_mollified(x[..., axis], delta, self._axis_kinks, self._axis_slope)
        return result


@register
class UserTable(RoughPotential):
    """
    Piecewise-linear interpolation of a table, constant beyond its ends.
    In more than one dimension the table is read as a radial profile of |x - c|.
    """
    name = "user_table"

    def __init__(self, dim: int, nodes: Sequence[float] = (), values: Sequence[float] = (), center=None):
        super().__init__(dim)
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2 or nodes.size != values.size:
            raise ParameterError("user_table needs matching node and value lists of length >= 2")
        if np.any(np.diff(nodes) <= 0):
            raise ParameterError("user_table nodes must be strictly increasing")
        self.nodes = nodes
        self.values = values
        self.center = _center(center, dim)

    def _coordinate(self, x):
        if self.dim == 1:
            return x[..., 0] - self.center[0]
        return np.linalg.norm(x - self.center, axis=-1)

    def _slope(self, t):
        slopes = np.concatenate([[0.0], np.diff(self.values) / np.diff(self.nodes), [0.0]])
        index = np.searchsorted(self.nodes, t, side="right")
        right = slopes[index]
        left = slopes[np.searchsorted(self.nodes, t, side="left")]
        return 0.5 * (left + right)

    def _kinks(self, lo, hi):
        return [t for t in self.nodes if lo < t < hi]

    def value(self, x):
        return np.interp(self._coordinate(x), self.nodes, self.values)

    def gradient(self, x):
        t = self._coordinate(x)
        s = self._slope(t)
        if self.dim == 1:
            return s[..., None]
        diff = x - self.center
        r = np.linalg.norm(diff, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(r > 0, s[..., None] * diff / np.where(r > 0, r, 1.0), 0.0)

    def kink_mask(self, x):
        t = self._coordinate(x)
        return np.any(np.isclose(t[..., None], self.nodes, rtol=0, atol=1e-12), axis=-1)

    def mollified_gradient(self, x, delta):
        if self.dim == 1:
            t = self._coordinate(x)
            return _piecewise_linear_mollified(t, delta, self._kinks, self._slope)[..., None]
        return super().mollified_gradient(x, delta)


@register
class Harmonic(RoughPotential):
    """omega^2 |x - c|^2 / 2"""
    name = "harmonic"
    smooth = True
    globally_bounded = False

    def __init__(self, dim: int, omega: float = 1.0, center=None):
        super().__init__(dim)
        self.omega = float(omega)
        self.center = _center(center, dim)

    def value(self, x):
        return 0.5 * self.omega ** 2 * np.sum((x - self.center) ** 2, axis=-1)

    def gradient(self, x):
        return self.omega ** 2 * (x - self.center)

    def laplacian(self, x):
        return np.full(x.shape[:-1], self.dim * self.omega ** 2)

    def mollified_gradient(self, x, delta):
        return self.gradient(x)


@register
class Quartic(RoughPotential):
    """a |x - c|^4"""
    name = "quartic"
    smooth = True
    globally_bounded = False

    def __init__(self, dim: int, a: float = 1.0, center=None):
        super().__init__(dim)
        self.a = float(a)
        self.center = _center(center, dim)

    def value(self, x):
        return self.a * np.sum((x - self.center) ** 2, axis=-1) ** 2

    def gradient(self, x):
        diff = x - self.center
        return 4.0 * self.a * np.sum(diff ** 2, axis=-1, keepdims=True) * diff

    def laplacian(self, x):
        return 4.0 * self.a * (self.dim + 2.0) * np.sum((x - self.center) ** 2, axis=-1)


@dataclass(frozen=True)
class SingularTerm:
    """
    Z / |x - c| for a point term, or Z / |x_i - x_j| for a pair term where
    x_i, x_j are the i-th and j-th blocks of three coordinates.
    """
    charge: float
    center: Optional[Tuple[float, ...]] = None
    pair: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if not self.charge > 0:
            raise ParameterError(f"singular terms must be repulsive (Z > 0), got Z={self.charge}")
        if (self.center is None) == (self.pair is None):
            raise ParameterError("a singular term needs exactly one of center or pair")

    def _relative(self, x: np.ndarray) -> np.ndarray:
        if self.center is not None:
            return x - np.asarray(self.center, dtype=float)
        i, j = self.pair
        return x[..., 3 * i:3 * i + 3] - x[..., 3 * j:3 * j + 3]

    def separation(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self._relative(x), axis=-1)

    def distance(self, x: np.ndarray) -> np.ndarray:
        """Euclidean distance to {x = c} or to the diagonal {x_i = x_j}."""
        r = self.separation(x)
        return r if self.center is not None else r / np.sqrt(2.0)

    @property
    def lower_constant(self) -> float:
        """c with Z / separation >= c / distance."""
        return self.charge if self.center is not None else self.charge / np.sqrt(2.0)

    def value(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.charge / self.separation(x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        rel = self._relative(x)
        r = np.linalg.norm(rel, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            g_rel = -self.charge * rel / r ** 3
        if self.center is not None:
            return g_rel
        g = np.zeros_like(x, dtype=float)
        i, j = self.pair
        g[..., 3 * i:3 * i + 3] = g_rel
        g[..., 3 * j:3 * j + 3] = -g_rel
        return g

    def describe(self) -> dict:
        return {"charge": self.charge, "center": self.center, "pair": self.pair}


@dataclass(frozen=True)
class SingularSet:
    terms: Tuple[SingularTerm, ...] = ()

    @property
    def empty(self) -> bool:
        return len(self.terms) == 0

    def distance(self, x: np.ndarray) -> np.ndarray:
        if self.empty:
            return np.full(x.shape[:-1], np.inf)
        return np.min(np.stack([t.distance(x) for t in self.terms]), axis=0)

    @property
    def lower_constant(self) -> float:
        return min((t.lower_constant for t in self.terms), default=0.0)

    @property
    def min_charge(self) -> float:
        return min((t.charge for t in self.terms), default=0.0)


@dataclass(frozen=True)
class PotentialSpec:
    dim: int
    rough: RoughPotential
    singular: Tuple[SingularTerm, ...] = ()
    name: str = ""

    def __post_init__(self):
        if self.rough.dim != self.dim:
            raise ParameterError(f"rough part has dimension {self.rough.dim}, potential has {self.dim}")
        for term in self.singular:
            if term.center is not None and len(term.center) != self.dim:
                raise ParameterError(f"singular center {term.center} does not match dimension {self.dim}")
            if term.pair is not None and 3 * (max(term.pair) + 1) > self.dim:
                raise ParameterError(f"pair {term.pair} needs dimension >= {3 * (max(term.pair) + 1)}")

    @property
    def singular_set(self) -> SingularSet:
        return SingularSet(tuple(self.singular))

    @property
    def smooth(self) -> bool:
        return self.rough.smooth and not self.singular

    @property
    def has_singular(self) -> bool:
        return bool(self.singular)

    def describe(self) -> dict:
        return {
            "dim": self.dim,
            "name": self.name or self.rough.name,
            "rough": self.rough.describe(),
            "singular": [t.describe() for t in self.singular],
        }


def make_potential(dim: int, name: str = "zero", params: Optional[dict] = None,
                   singular: Sequence[dict] = ()) -> PotentialSpec:
    """Resolve a catalog name and parameters into a PotentialSpec."""
    if name not in CATALOG:
        raise ConfigurationError(f"unknown potential '{name}', catalog has {sorted(CATALOG)}")
    try:
        rough = CATALOG[name](dim, **(params or {}))
    except TypeError as e:
        raise ConfigurationError(f"bad parameters for potential '{name}': {e}") from e
    terms = []
    for entry in singular:
        center = entry.get("center")
        pair = entry.get("pair")
        terms.append(SingularTerm(
            charge=float(entry.get("charge", 1.0)),
            center=tuple(float(c) for c in center) if center is not None else None,
            pair=tuple(int(i) for i in pair) if pair is not None else None,
        ))
    return PotentialSpec(dim=dim, rough=rough, singular=tuple(terms), name=name)


def dist_to_singular(singular_set: SingularSet, x) -> np.ndarray | float:
    """Distance to S; a 1-D input is one point, higher-rank inputs are (..., n)."""
    points = np.asarray(x, dtype=float)
    if points.ndim == 0:
        points = points.reshape(1, 1)
        single = True
    elif points.ndim == 1:
        points = points[None, :]
        single = True
    else:
        single = False
    d = singular_set.distance(points)
    return float(d.reshape(-1)[0]) if single else d


def _singular_value(spec: PotentialSpec, x: np.ndarray) -> np.ndarray:
    total = np.zeros(x.shape[:-1])
    for term in spec.singular:
        total = total + term.value(x)
    return total


def eval_potential(spec: PotentialSpec, x):
    points, mode = _as_points(x, spec.dim)
    if spec.has_singular:
        d = spec.singular_set.distance(points)
        if np.any(d == 0):
            raise SingularityError("potential evaluated on its singular set", distance=0.0)
    value = spec.rough.value(points) + _singular_value(spec, points)
    return _restore_scalar(value, mode)


def eval_gradient(spec: PotentialSpec, x, return_flags: bool = False):
    """
    Gradient a.e.; on the kink set of U_b the average of the one-sided limits
    is returned and the point is flagged.
    """
    points, mode = _as_points(x, spec.dim)
    if spec.has_singular:
        d = spec.singular_set.distance(points)
        if np.any(d == 0):
            raise SingularityError("gradient evaluated on the singular set", distance=0.0)
    grad = spec.rough.gradient(points)
    for term in spec.singular:
        grad = grad + term.gradient(points)
    flags = spec.rough.kink_mask(points)
    if np.any(flags):
        logging.warning(f"gradient of {spec.rough.name} evaluated at {int(flags.sum())} kink point(s); midpoint subgradient used")
    grad = _restore_vector(grad, mode, spec.dim)
    flags = bool(flags.reshape(-1)[0]) if mode == "single" else flags
    return (grad, flags) if return_flags else grad


def laplacian(spec: PotentialSpec, x) -> np.ndarray:
    points, mode = _as_points(x, spec.dim)
    lap = spec.rough.laplacian(points)
    if lap is None or spec.has_singular:
        raise ParameterError(f"potential '{spec.rough.name}' has no pointwise Laplacian")
    return _restore_scalar(lap, mode)


def potential_on_grid(spec: PotentialSpec, grid: SpaceGrid) -> np.ndarray:
    """U on the grid; points on the singular set are excluded (set to 0) with a warning."""
    points = np.stack(grid.mesh(), axis=-1)
    values = spec.rough.value(points)
    if spec.has_singular:
        d = spec.singular_set.distance(points)
        on_set = d == 0
        if np.any(on_set):
            logging.warning(f"{int(on_set.sum())} grid point(s) lie on the singular set and are excluded")
        safe = np.where(on_set[..., None], points + grid.spacing, points)
        values = values + np.where(on_set, 0.0, _singular_value(spec, safe))
    return values


def singular_on_grid(spec: PotentialSpec, grid: SpaceGrid) -> np.ndarray:
    points = np.stack(grid.mesh(), axis=-1)
    if not spec.has_singular:
        return np.zeros(grid.shape)
    d = spec.singular_set.distance(points)
    safe = np.where((d == 0)[..., None], points + grid.spacing, points)
    return np.where(d == 0, 0.0, _singular_value(spec, safe))


def rough_sup(spec: PotentialSpec, halfwidth: float, points: int = 256) -> float:
    """sup |U_b| over the box, sampled on a vertex lattice."""
    axis = np.linspace(-halfwidth, halfwidth, points + 1)
    if spec.dim <= 2:
        mesh = np.stack(np.meshgrid(*([axis] * spec.dim), indexing="ij"), axis=-1)
        return float(np.max(np.abs(spec.rough.value(mesh))))
    return float(max(np.max(np.abs(spec.rough.value(line))) for line in _axis_lines(spec.dim, axis)))


def rough_gradient_sup(spec: PotentialSpec, halfwidth: float, points: int = 256) -> float:
    axis = np.linspace(-halfwidth, halfwidth, points + 1)
    return float(max(np.max(np.linalg.norm(spec.rough.gradient(line), axis=-1))
                     for line in _axis_lines(spec.dim, axis)))


def _axis_lines(dim: int, axis: np.ndarray) -> List[np.ndarray]:
    lines = []
    for k in range(dim):
        line = np.zeros((axis.size, dim))
        line[:, k] = axis
        lines.append(line)
    return lines


@dataclass
class MollifiedGradient:
    """grad U_b * G_{delta^2} plus the unmollified singular gradient."""
    spec: PotentialSpec
    delta: float
    lipschitz: float = float("nan")
    warnings: List[str] = field(default_factory=list)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        points, mode = _as_points(x, self.spec.dim)
        grad = self.spec.rough.mollified_gradient(points, self.delta)
        for term in self.spec.singular:
            grad = grad + term.gradient(points)
        return _restore_vector(grad, mode, self.spec.dim)

    def mollified_potential(self, x: np.ndarray) -> np.ndarray:
        """U_b * G_{delta^2} + U_s, used for trajectory energies."""
        points, mode = _as_points(x, self.spec.dim)
        order = _HERMITE_ORDER.get(self.spec.dim, 6)
        nodes, weights = hermgauss(order)
        weights = weights / np.sqrt(np.pi)
        value = np.zeros(points.shape[:-1])
        for index in itertools.product(range(order), repeat=self.spec.dim):
            value = value + np.prod(weights[list(index)]) * self.spec.rough.value(points + self.delta * nodes[list(index)])
        return _restore_scalar(value + _singular_value(self.spec, points), mode)

    def on_grid(self, grid: SpaceGrid) -> np.ndarray:
        return self(np.stack(grid.mesh(), axis=-1))


def mollified_gradient(spec: PotentialSpec, delta: float, grid: Optional[SpaceGrid] = None,
                       halfwidth: Optional[float] = None) -> MollifiedGradient:
    """
    Mollify grad U_b at scale delta. The Lipschitz constant of the mollified
    rough gradient is estimated on fine axis lines over the box.
    """
    if not delta > 0:
        raise ParameterError(f"mollification scale must be positive, got {delta}")
    result = MollifiedGradient(spec, delta)
    if grid is not None and delta < grid.spacing:
        message = f"mollification scale {delta} is below the grid spacing {grid.spacing:.3g}"
        logging.warning(message)
        result.warnings.append(message)
    box = halfwidth if halfwidth is not None else (grid.halfwidth if grid is not None else 8.0)
    spacing = min(delta / 8.0, 2 * box / 512)
    axis = np.arange(-box, box + spacing, spacing)
    lipschitz = 0.0
    for line in _axis_lines(spec.dim, axis):
        g = spec.rough.mollified_gradient(line, delta)
        slope = np.abs(np.diff(g, axis=0)) / spacing
        lipschitz = max(lipschitz, float(np.max(slope)) if slope.size else 0.0)
    result.lipschitz = lipschitz
    return result


def validate_potential(spec: PotentialSpec, halfwidth: float, points: int = 256,
                       grid: Optional[SpaceGrid] = None) -> Report:
    """
    Bound, Lipschitz constant, per-axis total variation of grad U_b, growth
    ratio and singular-set geometry, evaluated on vertex lines over [-L, L].
    """
    report = Report(name=f"potential:{spec.name or spec.rough.name}")
    axis = np.linspace(-halfwidth, halfwidth, points + 1)
    step = axis[1] - axis[0]
    sup, lipschitz, growth = 0.0, 0.0, 0.0
    variation = []
    for line in _axis_lines(spec.dim, axis):
        values = spec.rough.value(line)
        slopes = np.diff(values) / step
        sup = max(sup, float(np.max(np.abs(values))))
        lipschitz = max(lipschitz, float(np.max(np.abs(slopes))))
        variation.append(float(np.sum(np.abs(np.diff(slopes)))))
        grad = np.linalg.norm(spec.rough.gradient(line), axis=-1)
        growth = max(growth, float(np.max(grad / (1.0 + np.linalg.norm(line, axis=-1)))))

    report.constants.update({
        "ub_sup": sup,
        "lipschitz": lipschitz,
        "gradient_tv": max(variation),
        "growth_ratio": growth,
    })
    for k, tv in enumerate(variation):
        report.constants[f"gradient_tv_axis{k}"] = tv
    report.add("ub_bounded_on_box", sup)
    report.add("ub_lipschitz", lipschitz)
    report.add("gradient_bv", max(variation))
    report.add("growth_ratio", growth)
    if not spec.rough.globally_bounded:
        report.note(f"{spec.rough.name} is bounded on the box only; flagged unbounded globally")

    if spec.has_singular:
        grid = grid or SpaceGrid(spec.dim, halfwidth, 64 if spec.dim >= 3 else 256)
        coords = np.stack(grid.mesh(), axis=-1)
        d = spec.singular_set.distance(coords)
        off = d > 0
        c = spec.singular_set.lower_constant
        product = _singular_value(spec, np.where(off[..., None], coords, coords + grid.spacing))[off] * d[off]
        report.constants.update({"min_dist": float(np.min(d)), "c_lower": c, "z_min": spec.singular_set.min_charge})
        report.add("min_dist_to_singular", float(np.min(d)), passed=bool(np.min(d) > 0))
        report.add("coulomb_lower_bound", float(c - np.min(product)), bound=1e-12)
        report.add("repulsive", spec.singular_set.min_charge, passed=spec.singular_set.min_charge > 0)
    return report
