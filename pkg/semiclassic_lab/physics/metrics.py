"""
Weak-topology distance, error-term pairings, weak PDE residuals and the
measured-versus-assembled bounds.

Test functions are finite sums of separable terms c * prod a_i(x_i) prod
b_i(p_i), so every pairing against a state reduces to transforms of
one-dimensional factors. The partial Fourier transform in p is
F_p b(y) = int b(p) exp(-i p y) dp.
"""
from __future__ import annotations

import functools
import itertools
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.integrate
import scipy.ndimage
import scipy.special

from semiclassic_lab.config import settings
from semiclassic_lab.errors import MassMismatchError, ParameterError, ResolutionError
from semiclassic_lab.models.report import BoundReport, TightnessProfile
from semiclassic_lab.physics.grid import PhaseField, PhaseLattice
from semiclassic_lab.physics.phase_space import (
    half_shifted,
    marginals,
    momentum_band,
    momentum_on_lattice,
    momentum_spacing,
    padded_gaussian,
    split_shift,
)
from semiclassic_lab.physics.potentials import (
    CATALOG,
    PotentialSpec,
    eval_gradient,
    eval_potential,
    rough_gradient_sup,
    rough_sup,
)
from semiclassic_lab.physics.quantum import Trajectory
from semiclassic_lab.physics.states import MixedState, disop_constant, kernel_diagonal, singular_square_expectation

_HERMITE_NODES = 64
_FOURIER_CHUNK = 128


class Factor(ABC):
    """Smooth function of one real variable."""

    @abstractmethod
    def value(self, t: np.ndarray) -> np.ndarray:
        pass

    def derivative(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        h = 1e-5 * self.scale
        return (self.value(t + h) - self.value(t - h)) / (2 * h)

    @property
    def extent(self) -> Optional[Tuple[float, float]]:
        """Interval outside which the factor vanishes (to double precision)."""
        return None

    @property
    def scale(self) -> float:
        return 1.0

    def fourier(self, y: np.ndarray) -> np.ndarray:
        return _fourier_quadrature(self, np.asarray(y, dtype=float))

    def sup(self, points: int = 4097, box: Optional[Tuple[float, float]] = None) -> float:
        lo, hi = self.extent or box or (-1.0, 1.0)
        return float(np.max(np.abs(self.value(np.linspace(lo, hi, points)))))

    def lipschitz(self, points: int = 4097, box: Optional[Tuple[float, float]] = None) -> float:
        lo, hi = self.extent or box or (-1.0, 1.0)
        return float(np.max(np.abs(self.derivative(np.linspace(lo, hi, points)))))


def _fourier_quadrature(factor: Factor, y: np.ndarray) -> np.ndarray:
    if factor.extent is None:
        raise ParameterError(f"{type(factor).__name__} has unbounded support; its p-transform is not defined")
    lo, hi = factor.extent
    ymax = float(np.max(np.abs(y))) if y.size else 0.0
    nodes = max(2049, int(math.ceil((hi - lo) * ymax / 0.25)) + 1)
    t = np.linspace(lo, hi, nodes)
    samples = factor.value(t)
    out = np.empty(y.shape, dtype=complex)
    flat, target = y.reshape(-1), out.reshape(-1)
    # the factors vanish to all orders at the ends, where the trapezoid rule is spectral
    for start in range(0, flat.size, _FOURIER_CHUNK):
        block = flat[start:start + _FOURIER_CHUNK]
        target[start:start + _FOURIER_CHUNK] = scipy.integrate.trapezoid(
            samples[None, :] * np.exp(-1j * block[:, None] * t[None, :]), x=t, axis=1)
    return out


@dataclass(frozen=True)
class Bump(Factor):
    """exp(1 - 1/(1 - s^2)) with s = (t - center) / radius; peak value 1."""
    center: float = 0.0
    radius: float = 1.0

    def value(self, t):
        s = (np.asarray(t, dtype=float) - self.center) / self.radius
        inside = np.abs(s) < 1
        out = np.zeros(s.shape)
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
        return out

    def derivative(self, t):
        s = (np.asarray(t, dtype=float) - self.center) / self.radius
        inside = np.abs(s) < 1
        out = np.zeros(s.shape)
        si = s[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - si ** 2)) * (-2 * si / (1.0 - si ** 2) ** 2) / self.radius
        return out

    @property
    def extent(self):
        return (self.center - self.radius, self.center + self.radius)

    @property
    def scale(self):
        return self.radius


@dataclass(frozen=True)
class GaussianFactor(Factor):
    center: float = 0.0
    width: float = 1.0

    def value(self, t):
        return np.exp(-((np.asarray(t, dtype=float) - self.center) / self.width) ** 2)

    def derivative(self, t):
        s = np.asarray(t, dtype=float) - self.center
        return -2 * s / self.width ** 2 * np.exp(-(s / self.width) ** 2)

    @property
    def extent(self):
        return (self.center - 6.5 * self.width, self.center + 6.5 * self.width)

    @property
    def scale(self):
        return self.width

    def fourier(self, y):
        y = np.asarray(y, dtype=float)
        return self.width * np.sqrt(np.pi) * np.exp(-(self.width * y) ** 2 / 4 - 1j * self.center * y)


@dataclass(frozen=True)
class Mode(Factor):
    """1, cos(w (t - c)) or sin(w (t - c)); only meaningful under a window."""
    frequency: float = 0.0
    kind: str = "one"
    center: float = 0.0

    def value(self, t):
        s = np.asarray(t, dtype=float) - self.center
        if self.kind == "one":
            return np.ones(s.shape)
        if self.kind == "cos":
            return np.cos(self.frequency * s)
        return np.sin(self.frequency * s)

    def derivative(self, t):
        s = np.asarray(t, dtype=float) - self.center
        if self.kind == "one":
            return np.zeros(s.shape)
        if self.kind == "cos":
            return -self.frequency * np.sin(self.frequency * s)
        return self.frequency * np.cos(self.frequency * s)


@dataclass(frozen=True)
class FlatTop(Factor):
    """Equal to 1 on |t - c| <= radius - ramp, smooth descent to 0 at radius."""
    center: float = 0.0
    radius: float = 1.0
    ramp: float = 0.25

    @staticmethod
    def _step(s):
        # C-infinity transition, 0 for s <= 0 and 1 for s >= 1
        s = np.clip(s, 0.0, 1.0)
        with np.errstate(divide="ignore", over="ignore"):
            f = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
            g = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
        return f / (f + g)

    def value(self, t):
        s = (self.radius - np.abs(np.asarray(t, dtype=float) - self.center)) / self.ramp
        return self._step(s)

    @property
    def extent(self):
        return (self.center - self.radius, self.center + self.radius)

    @property
    def scale(self):
        return self.ramp


@dataclass(frozen=True)
class Constant(Factor):
    level: float = 1.0

    def value(self, t):
        return np.full(np.shape(t), self.level, dtype=float)

    def derivative(self, t):
        return np.zeros(np.shape(t))


@dataclass(frozen=True)
class Product(Factor):
    first: Factor
    second: Factor

    def value(self, t):
        return self.first.value(t) * self.second.value(t)

    def derivative(self, t):
        return self.first.derivative(t) * self.second.value(t) + self.first.value(t) * self.second.derivative(t)

    @property
    def extent(self):
        spans = [f.extent for f in (self.first, self.second) if f.extent is not None]
        if not spans:
            return None
        lo, hi = max(s[0] for s in spans), min(s[1] for s in spans)
        return (lo, max(lo, hi))

    @property
    def scale(self):
        return min(self.first.scale, self.second.scale)


@dataclass(frozen=True)
class Power(Factor):
    """t^k times a factor."""
    base: Factor
    power: int = 1

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return t ** self.power * self.base.value(t)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        lead = self.power * t ** (self.power - 1) * self.base.value(t) if self.power else 0.0
        return lead + t ** self.power * self.base.derivative(t)

    @property
    def extent(self):
        return self.base.extent

    @property
    def scale(self):
        return self.base.scale


@dataclass(frozen=True)
class Derivative(Factor):
    base: Factor

    def value(self, t):
        return self.base.derivative(t)

    @property
    def extent(self):
        return self.base.extent

    @property
    def scale(self):
        return self.base.scale

    def fourier(self, y):
        y = np.asarray(y, dtype=float)
        return 1j * y * self.base.fourier(y)


@dataclass(frozen=True)
class Smoothed(Factor):
    """Convolution with the one-dimensional G_eps, by Gauss-Hermite quadrature."""
    base: Factor
    eps: float

    def _nodes(self):
        u, w = np.polynomial.hermite.hermgauss(_HERMITE_NODES)
        return np.sqrt(self.eps) * u, w / np.sqrt(np.pi)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        shifts, weights = self._nodes()
        return np.tensordot(self.base.value(t[..., None] - shifts), weights, axes=([-1], [0]))

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        shifts, weights = self._nodes()
        return np.tensordot(self.base.derivative(t[..., None] - shifts), weights, axes=([-1], [0]))

    @property
    def extent(self):
        if self.base.extent is None:
            return None
        pad = 6.5 * np.sqrt(self.eps)
        return (self.base.extent[0] - pad, self.base.extent[1] + pad)

    @property
    def scale(self):
        return min(self.base.scale, np.sqrt(self.eps))

    def fourier(self, y):
        y = np.asarray(y, dtype=float)
        return self.base.fourier(y) * np.exp(-self.eps * y ** 2 / 4)


@dataclass(frozen=True)
class SeparableTerm:
    coefficient: complex
    x_factors: Tuple[Factor, ...]
    p_factors: Tuple[Factor, ...]


@dataclass(frozen=True)
class TestFunction:
    """Finite sum of separable phase-space terms."""

    terms: Tuple[SeparableTerm, ...]
    label: str = ""
    lipschitz: float = math.nan

    @classmethod
    def separable(cls, x_factors: Sequence[Factor], p_factors: Sequence[Factor], label: str = "",
                  coefficient: complex = 1.0) -> "TestFunction":
        if len(x_factors) != len(p_factors):
            raise ParameterError("a test function needs one x factor and one p factor per axis")
        return cls((SeparableTerm(coefficient, tuple(x_factors), tuple(p_factors)),), label)

    @property
    def dim(self) -> int:
        return len(self.terms[0].x_factors)

    def evaluate(self, lattice: PhaseLattice) -> np.ndarray:
        out = np.zeros(lattice.shape, dtype=complex)
        for term in self.terms:
            vectors = [f.value(a) for f, a in zip(term.x_factors + term.p_factors, lattice.x_axes + lattice.p_axes)]
            out += term.coefficient * functools.reduce(np.multiply.outer, vectors)
        return out.real if np.all(np.imag(out) == 0) else out

    def pair(self, phase_field: PhaseField) -> complex:
        """int phi dmu by one contraction per axis."""
        lattice = phase_field.lattice
        total = 0.0
        for term in self.terms:
            values = phase_field.values
            for factor, axis in zip(term.x_factors + term.p_factors, lattice.x_axes + lattice.p_axes):
                values = np.tensordot(values, factor.value(axis), axes=([0], [0]))
            total = total + term.coefficient * values
        return complex(total * lattice.cell_volume)

    def _rebuild(self, terms: List[SeparableTerm], label: str) -> "TestFunction":
        return TestFunction(tuple(terms), label)

    def transport(self) -> "TestFunction":
        """p . grad_x phi"""
        terms = []
        for term in self.terms:
            for i in range(self.dim):
                xs = list(term.x_factors)
                ps = list(term.p_factors)
                xs[i] = Derivative(xs[i])
                ps[i] = Power(ps[i], 1)
                terms.append(SeparableTerm(term.coefficient, tuple(xs), tuple(ps)))
        return self._rebuild(terms, f"transport({self.label})")

    def x_derivative(self, axis: int) -> "TestFunction":
        terms = []
        for term in self.terms:
            xs = list(term.x_factors)
            xs[axis] = Derivative(xs[axis])
            terms.append(SeparableTerm(term.coefficient, tuple(xs), term.p_factors))
        return self._rebuild(terms, f"d_x{axis}({self.label})")

    def mixed_divergence(self) -> "TestFunction":
        """sum_i d/dx_i d/dp_i phi"""
        terms = []
        for term in self.terms:
            for i in range(self.dim):
                xs = list(term.x_factors)
                ps = list(term.p_factors)
                xs[i] = Derivative(xs[i])
                ps[i] = Derivative(ps[i])
                terms.append(SeparableTerm(term.coefficient, tuple(xs), tuple(ps)))
        return self._rebuild(terms, f"mixed({self.label})")

    def smoothed(self, eps: float) -> "TestFunction":
        """phi * G_eps^(2n)"""
        terms = [SeparableTerm(t.coefficient, tuple(Smoothed(f, eps) for f in t.x_factors),
                               tuple(Smoothed(f, eps) for f in t.p_factors)) for t in self.terms]
        return self._rebuild(terms, f"smoothed({self.label})")


@dataclass
class TestFunctionDictionary:
    """
    Bump-windowed Fourier modes per phase-space axis at two window scales,
    tensorized over all 2n axes, plus a constant-on-box window. The member
    with scale index s and frequency indices f_a carries weight
    2^-(s + sum f_a).
    """

    lattice: PhaseLattice
    frequencies: int = 8
    scale_fractions: Tuple[float, ...] = (0.9, 0.45)
    max_shell: Optional[int] = None
    centers: Tuple[float, ...] = field(init=False)
    halfwidths: Tuple[float, ...] = field(init=False)

    def __post_init__(self):
        axes = self.lattice.x_axes + self.lattice.p_axes
        spacings = self.lattice.spacings
        self.centers = tuple(float(0.5 * (a[0] + a[-1])) for a in axes)
        self.halfwidths = tuple(float(0.5 * (a[-1] - a[0]) + 0.5 * s) for a, s in zip(axes, spacings))
        self._indices = []
        for s in range(len(self.scale_fractions)):
            for freqs in itertools.product(range(self.frequencies), repeat=len(axes)):
                if self.max_shell is None or s + sum(freqs) <= self.max_shell:
                    self._indices.append((s, freqs))
        self._tables = {}

    def axis_factor(self, scale: int, axis: int, frequency: int) -> Factor:
        radius = self.scale_fractions[scale] * self.halfwidths[axis]
        center = self.centers[axis]
        window = Bump(center, radius)
        if frequency == 0:
            return window
        omega = math.ceil(frequency / 2) * np.pi / radius
        kind = "sin" if frequency % 2 else "cos"
        return Product(window, Mode(omega, kind, center))

    def box_factor(self, axis: int) -> Factor:
        radius = self.scale_fractions[0] * self.halfwidths[axis]
        return FlatTop(self.centers[axis], radius, 0.3 * radius)

    @property
    def size(self) -> int:
        return 1 + len(self._indices)

    @property
    def weights(self) -> np.ndarray:
        return np.array([1.0] + [2.0 ** -(s + sum(f)) for s, f in self._indices])

    @property
    def labels(self) -> List[str]:
        return ["box"] + [f"s{s}:" + ",".join(str(v) for v in f) for s, f in self._indices]

    def _axis_table(self, scale: int, axis: int) -> Tuple[np.ndarray, np.ndarray]:
        key = (scale, axis)
        if key not in self._tables:
            coordinates = (self.lattice.x_axes + self.lattice.p_axes)[axis]
            factors = [self.axis_factor(scale, axis, f) for f in range(self.frequencies)]
            values = np.stack([f.value(coordinates) for f in factors])
            lip = np.array([f.lipschitz() for f in factors])
            self._tables[key] = (values, lip)
        return self._tables[key]

    def moments(self, phase_field: PhaseField) -> np.ndarray:
        """int phi_k dmu for every member, in dictionary order."""
        if not phase_field.lattice.same_as(self.lattice):
            raise ParameterError("field lattice differs from the dictionary lattice")
        axes = len(self.lattice.shape)
        volume = self.lattice.cell_volume
        box = phase_field.values
        for a in range(axes):
            coordinates = (self.lattice.x_axes + self.lattice.p_axes)[a]
            box = np.tensordot(box, self.box_factor(a).value(coordinates), axes=([0], [0]))
        by_scale = []
        for s in range(len(self.scale_fractions)):
            values = phase_field.values
            for a in range(axes):
                table, _ = self._axis_table(s, a)
                values = np.tensordot(values, table, axes=([0], [1]))
            by_scale.append(values * volume)
        out = [float(box) * volume]
        for s, freqs in self._indices:
            out.append(float(by_scale[s][freqs]))
        return np.array(out)

    def lipschitz_constants(self) -> np.ndarray:
        axes = len(self.lattice.shape)
        box = math.sqrt(sum(self.box_factor(a).lipschitz() ** 2 for a in range(axes)))
        out = [box]
        for s, freqs in self._indices:
            out.append(math.sqrt(sum(self._axis_table(s, a)[1][f] ** 2 for a, f in enumerate(freqs))))
        return np.array(out)

    def function(self, index: int) -> TestFunction:
        n = self.lattice.dim
        if index == 0:
            factors = [self.box_factor(a) for a in range(2 * n)]
            return TestFunction.separable(factors[:n], factors[n:], label="box")
        s, freqs = self._indices[index - 1]
        factors = [self.axis_factor(s, a, f) for a, f in enumerate(freqs)]
        return TestFunction.separable(factors[:n], factors[n:], label=self.labels[index])

    def functions(self, count: Optional[int] = None) -> List[TestFunction]:
        count = self.size if count is None else min(count, self.size)
        return [self.function(i) for i in range(count)]

    def describe(self) -> dict:
        return {
            "K_total": self.size,
            "frequencies": self.frequencies,
            "scales": list(self.scale_fractions),
            "max_shell": self.max_shell,
            "lattice": self.lattice.describe(),
        }


def dP(mu: PhaseField, nu: PhaseField, dictionary: Optional[TestFunctionDictionary] = None) -> float:
    """
    sum_k w_k |int phi_k dmu - int phi_k dnu| over the truncated
    dictionary; a metric on lattice densities up to the truncation.
    """
    if not mu.lattice.same_as(nu.lattice):
        raise ParameterError("d_P compares fields on the same lattice")
    mass_mu, mass_nu = mu.integral(), nu.integral()
    if abs(mass_mu - mass_nu) > settings.MASS_MISMATCH_TOLERANCE:
        raise MassMismatchError(f"d_P arguments carry masses {mass_mu!r} and {mass_nu!r}")
    dictionary = dictionary or TestFunctionDictionary(mu.lattice)
    difference = mu.with_values(np.real(mu.values) - np.real(nu.values))
    return float(np.sum(dictionary.weights * np.abs(dictionary.moments(difference))))


def _off_singular(potential: PotentialSpec, points: np.ndarray) -> np.ndarray:
    """U at the points; nodes on the singular set are left out of the quadrature."""
    values = np.zeros(len(points))
    on = potential.singular_set.distance(points) == 0 if potential.has_singular else np.zeros(len(points), dtype=bool)
    if np.any(on):
        logging.info(f"{int(on.sum())} shift node(s) on the singular set dropped from the pairing")
    values[~on] = np.asarray(eval_potential(potential, points[~on]), dtype=float).reshape(-1)
    return values


class KernelPairing:
    """
    Pairings of test functions with the Wigner transform and with the error
    terms of one state, in the y representation: y_m = m dx / eps puts
    x +- eps y / 2 on the grid for even m and on the cell midpoints for odd m,
    where the modes are read from their spectral interpolant. Then

        <W, phi>       = (2 pi)^-n      sum_x sum_m K(x, m) F_p phi(x, y_m) dx^n dy^n
        <E'(U), phi>   = -i (2 pi)^-n   sum_x sum_m dU(x, m) / eps K(x, m) F_p phi(x, y_m) dx^n dy^n

    with K(x, m) = rho(x + m dx / 2, x - m dx / 2) and the state extended by
    zero outside the box, where the kernel vanishes for |y| > 2 L / eps.
    """

    KINDS = ("wigner", "full", "remainder")

    def __init__(self, state: MixedState, potential: Optional[PotentialSpec] = None):
        self.state = state
        self.potential = potential
        grid = state.grid
        n, N = grid.dim, grid.points
        self._extended = 3 * N
        pad = [(0, 0), (0, 0)] + [(N, N)] * n
        shifted = np.stack([half_shifted(mode, grid) for mode in state.modes])
        self._modes = np.pad(shifted, pad).reshape(state.rank, 2 ** n, -1)
        index = np.stack(np.meshgrid(*([np.arange(N) + N] * n), indexing="ij"), axis=-1).reshape(-1, n)
        self._strides = self._extended ** np.arange(n - 1, -1, -1)
        self._base = index @ self._strides
        self._potential = None
        self._gradient = None
        if potential is not None:
            axis = grid.axis[0] + grid.spacing * (np.arange(self._extended) - N)
            values = []
            for pattern in range(2 ** n):
                offsets = [0.5 * grid.spacing * (pattern >> a & 1) for a in range(n)]
                axes = [axis + offset for offset in offsets]
                points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
                values.append(_off_singular(potential, points))
            self._potential = np.stack(values)
            self._gradient = np.asarray(eval_gradient(potential, grid.coordinates()), dtype=float).reshape(-1, n)

    @property
    def p_box(self) -> float:
        return momentum_band(self.state.grid, self.state.eps)

    def _check_band(self, factor: Factor) -> None:
        """The shift lattice represents p-factors supported inside |p| < pi eps / dx."""
        if factor.extent is None:
            raise ParameterError("p factors of paired test functions need bounded support")
        lo, hi = factor.extent
        box = self.p_box
        if lo >= -box and hi <= box:
            return
        p = np.linspace(min(lo, -box), max(hi, box), 8193)
        mass = np.abs(factor.value(p))
        total = float(mass.sum())
        outside = float(mass[np.abs(p) > box].sum())
        if total > 0 and outside / total > settings.FOURIER_TAIL_TOLERANCE:
            raise ResolutionError(
                f"test function p-support [{lo:.3g}, {hi:.3g}] exceeds the resolved band |p| < {box:.3g} "
                f"(outside fraction {outside / total:.2e}); refine dx"
            )

    def _shift_count(self, transforms: List[np.ndarray]) -> int:
        """Smallest M with the y-tail of every p-transform beyond M below the tolerance."""
        N = self.state.grid.points
        needed = 0
        for values in transforms:
            magnitude = np.abs(values)
            total = magnitude.sum()
            if total == 0:
                continue
            # values are laid out on m = -(N-1)..(N-1)
            radial = magnitude[N - 1:] + np.concatenate([[0.0], magnitude[:N - 1][::-1]])
            tail = np.cumsum(radial[::-1])[::-1]
            beyond = np.append(tail[1:], 0.0)
            captured = np.nonzero(beyond <= settings.FOURIER_TAIL_TOLERANCE * total)[0]
            needed = max(needed, int(captured[0]) if captured.size else N - 1)
        return needed

    def pair(self, requests: Dict[str, Sequence[TestFunction]]) -> Dict[str, np.ndarray]:
        """
        Pairings for every requested kind in one pass over the shifts:
        'wigner' for <W, phi>, 'full' for <E'(U), phi>, 'remainder' for
        <E(U), phi> with grad U(x) . y subtracted inside the bracket.
        """
        grid, eps = self.state.grid, self.state.eps
        n, N, dx = grid.dim, grid.points, grid.spacing
        for kind in requests:
            if kind not in self.KINDS:
                raise ParameterError(f"unknown pairing kind '{kind}'")
            if kind != "wigner" and self._potential is None:
                raise ParameterError("error-term pairings need a potential")
        shifts_1d = np.arange(-(N - 1), N)
        y_1d = dx * shifts_1d / eps
        rows = []
        for kind, functions in requests.items():
            for f_index, function in enumerate(functions):
                if function.dim != n:
                    raise ParameterError(f"test function dimension {function.dim} does not match state {n}")
                for term in function.terms:
                    for factor in term.p_factors:
                        self._check_band(factor)
                    a = functools.reduce(np.multiply.outer, [f.value(grid.axis) for f in term.x_factors])
                    b = [f.fourier(y_1d) for f in term.p_factors]
                    rows.append((kind, f_index, term.coefficient, np.asarray(a).reshape(-1), b))
        results = {kind: np.zeros(len(functions), dtype=complex) for kind, functions in requests.items()}
        if not rows:
            return results
        M = self._shift_count([t for row in rows for t in row[4]])
        window = slice(N - 1 - M, N + M)
        A = np.stack([row[3] for row in rows]).astype(complex)
        B = [np.stack([row[4][axis][window] for row in rows]) for axis in range(n)]
        kinds = [row[0] for row in rows]
        shifts = np.array(list(itertools.product(range(-M, M + 1), repeat=n)), dtype=int).reshape(-1, n)
        sums = np.zeros(len(rows), dtype=complex)
        chunk = max(1, (1 << 21) // self._base.size)
        for start in range(0, len(shifts), chunk):
            m = shifts[start:start + chunk]
            up, down, odd = split_shift(m)
            pattern = (odd << np.arange(n)).sum(axis=1)[None, :]
            plus = self._base[:, None] + (up @ self._strides)[None, :]
            minus = self._base[:, None] - (down @ self._strides)[None, :]
            kernel = np.zeros(plus.shape, dtype=complex)
            for weight, mode in zip(self.state.weights, self._modes):
                kernel += weight * mode[pattern, plus] * np.conj(mode[pattern, minus])
            weighted = {"wigner": kernel}
            if "full" in kinds or "remainder" in kinds:
                bracket = self._potential[pattern, plus] - self._potential[pattern, minus]
                if "full" in kinds:
                    weighted["full"] = bracket / eps * kernel
                if "remainder" in kinds:
                    linear = dx * (self._gradient @ m.T)
                    weighted["remainder"] = (bracket - linear) / eps * kernel
            transform = functools.reduce(np.multiply, [B[axis][:, m[:, axis] + M] for axis in range(n)])
            for kind, values in weighted.items():
                select = np.array([k == kind for k in kinds])
                if not np.any(select):
                    continue
                projected = A[select] @ values
                sums[select] += np.sum(projected * transform[select], axis=1)
        measure = (dx * dx / eps) ** n / (2 * np.pi) ** n
        for row, total in zip(rows, sums):
            kind, f_index, coefficient = row[0], row[1], row[2]
            scale = measure if kind == "wigner" else -1j * measure
            results[kind][f_index] += coefficient * total * scale
        return results

    def wigner_moments(self, functions: Sequence[TestFunction]) -> np.ndarray:
        return np.real(self.pair({"wigner": functions})["wigner"])


def error_term_paired(state: MixedState, potential: PotentialSpec, phi: TestFunction,
                      variant: str = "full") -> complex:
    """int int E'_eps(U, rho) phi ('full') or E_eps(U, rho) phi ('remainder')."""
    if variant not in ("full", "remainder"):
        raise ParameterError(f"error-term variant must be 'full' or 'remainder', got '{variant}'")
    return complex(KernelPairing(state, potential).pair({variant: [phi]})[variant][0])


def wigner_husimi_gap(state: MixedState, functions: Sequence[TestFunction]) -> np.ndarray:
    """|<W, phi> - <W~, phi>| per function, using <W~, phi> = <W, phi * G_eps>."""
    smoothed = [f.smoothed(state.eps) for f in functions]
    values = KernelPairing(state).pair({"wigner": list(functions) + smoothed})["wigner"].real
    count = len(functions)
    return np.abs(values[:count] - values[count:])


def _time_window(times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """psi(t) = sin^2(pi (t - t0) / T) and its derivative, vanishing at both ends."""
    t0, span = times[0], times[-1] - times[0]
    if span <= 0:
        raise ParameterError("a residual needs a time series spanning a positive interval")
    phase = np.pi * (times - t0) / span
    return np.sin(phase) ** 2, np.pi / span * np.sin(2 * phase)


def _check_series(trajectory: Trajectory) -> np.ndarray:
    times = np.asarray(trajectory.times, dtype=float)
    if len(times) < 3:
        raise ParameterError("a residual needs at least three recorded states")
    steps = np.diff(times)
    if np.max(steps) - np.min(steps) > 1e-9 * max(1.0, times[-1]):
        raise ParameterError("residual time quadrature needs a uniform record cadence")
    return times


def wigner_defects(trajectory: Trajectory, potential: PotentialSpec,
                   functions: Sequence[TestFunction]) -> np.ndarray:
    """
    |int psi' <W_t, phi> dt + int psi [<W_t, p . grad_x phi> + <E'(U, rho_t), phi>] dt|
    per test function.
    """
    times = _check_series(trajectory)
    psi, dpsi = _time_window(times)
    transports = [f.transport() for f in functions]
    base, drift = [], []
    for state in trajectory.states:
        values = KernelPairing(state, potential).pair(
            {"wigner": list(functions) + transports, "full": functions})
        count = len(functions)
        base.append(values["wigner"][:count].real)
        drift.append(values["wigner"][count:].real + values["full"].real)
    base, drift = np.array(base), np.array(drift)
    integral = (scipy.integrate.simpson(dpsi[:, None] * base, x=times, axis=0)
                + scipy.integrate.simpson(psi[:, None] * drift, x=times, axis=0))
    return np.abs(integral)


def wigner_residual(trajectory: Trajectory, potential: PotentialSpec,
                    functions: Sequence[TestFunction]) -> float:
    defects = wigner_defects(trajectory, potential, functions)
    value = float(np.max(defects))
    logging.info(f"Wigner residual {value:.3e} over {len(defects)} test function(s)")
    return value


@dataclass
class HusimiResidual:
    """
    total: defect of the Husimi identity with every term kept.
    correction: sup over t and phi of (eps/2)|<W~_t, sum_i d_xi d_pi phi>|,
    the weak form of sqrt(eps) div_x [W * G_bar].
    limit_defect: |int psi [<E(U, rho_t), phi * G> - correction]|, what the
    classical limit drops.
    """
    epsilon: float
    total: float
    correction: float
    limit_defect: float
    per_function: np.ndarray
    correction_per_function: np.ndarray


def husimi_residual(trajectory: Trajectory, potential: PotentialSpec,
                    functions: Sequence[TestFunction]) -> HusimiResidual:
    """
    Defect of d/dt <W~, phi> = <W~, p . grad_x phi> + <E'(U), phi * G_eps>
    - (eps/2) <W~, sum_i d_xi d_pi phi>, with every Husimi pairing taken as
    a Wigner pairing against the smoothed test function.
    """
    times = _check_series(trajectory)
    psi, dpsi = _time_window(times)
    eps = trajectory.states[0].eps
    smoothed = [f.smoothed(eps) for f in functions]
    transports = [f.transport().smoothed(eps) for f in functions]
    mixed = [f.mixed_divergence().smoothed(eps) for f in functions]
    count = len(functions)
    base, drift, correction, remainder = [], [], [], []
    for state in trajectory.states:
        values = KernelPairing(state, potential).pair(
            {"wigner": smoothed + transports + mixed, "full": smoothed, "remainder": smoothed})
        w = values["wigner"].real
        corr = 0.5 * eps * w[2 * count:]
        base.append(w[:count])
        drift.append(w[count:2 * count] + values["full"].real - corr)
        correction.append(corr)
        remainder.append(values["remainder"].real - corr)
    base, drift = np.array(base), np.array(drift)
    correction, remainder = np.array(correction), np.array(remainder)
    total = np.abs(scipy.integrate.simpson(dpsi[:, None] * base, x=times, axis=0)
                   + scipy.integrate.simpson(psi[:, None] * drift, x=times, axis=0))
    limit = np.abs(scipy.integrate.simpson(psi[:, None] * remainder, x=times, axis=0))
    per_correction = np.max(np.abs(correction), axis=0)
    result = HusimiResidual(
        epsilon=eps,
        total=float(np.max(total)),
        correction=float(np.max(per_correction)),
        limit_defect=float(np.max(limit)),
        per_function=total,
        correction_per_function=per_correction,
    )
    logging.info(f"Husimi residual {result.total:.3e}, correction {result.correction:.3e} at eps={eps}")
    return result


def tightness_profile(source: PhaseField | MixedState, radii: Sequence[float],
                      p2_moment: Optional[float] = None) -> TightnessProfile:
    """
    Mass outside C_R = {|x| <= R, |p| <= R}, bounded by the half-sum of the
    x-marginal and p-marginal tails. A state is profiled through the exact
    Husimi marginals rho(x, x) * G_eps and |phi_hat|^2 * G_eps.
    """
    radii = sorted(float(r) for r in radii)
    if isinstance(source, MixedState):
        x_axes, x_density, p_axes, p_density = _husimi_marginals(source)
        exact = None
        n = source.dim
    else:
        lattice = source.lattice
        n = lattice.dim
        x_axes, p_axes = lattice.x_axes, lattice.p_axes
        x_density = np.real(marginals(source, "x"))
        p_density = np.real(marginals(source, "p"))
        exact = source
    x_radius = np.sqrt(sum(np.meshgrid(*[a ** 2 for a in x_axes], indexing="ij")))
    p_radius = np.sqrt(sum(np.meshgrid(*[a ** 2 for a in p_axes], indexing="ij")))
    dx = float(np.prod([a[1] - a[0] for a in x_axes]))
    dp = float(np.prod([a[1] - a[0] for a in p_axes]))
    profile = TightnessProfile(radii=radii)
    for R in radii:
        x_tail = float(np.sum(x_density[x_radius > R]) * dx)
        p_tail = float(np.sum(p_density[p_radius > R]) * dp)
        profile.x_tail.append(x_tail)
        profile.p_tail.append(p_tail)
        if exact is None:
            profile.outside.append(x_tail + p_tail)
        else:
            inside = np.multiply.outer(x_radius <= R, p_radius <= R)
            profile.outside.append(float(np.sum(np.real(exact.values)[~inside]) * exact.lattice.cell_volume))
        if p2_moment is not None:
            profile.p_bound.append((p2_moment + n / 2) / R ** 2)
    return profile


def _husimi_marginals(state: MixedState):
    grid, eps, n = state.grid, state.eps, state.dim
    x_density = np.real(padded_gaussian(np.real(kernel_diagonal(state)), [grid.spacing] * n, eps))
    dp = momentum_spacing(grid, eps)
    p_axis = dp * (np.arange(2 * grid.points) - grid.points)
    p_density = np.real(padded_gaussian(momentum_on_lattice(state), [dp] * n, eps))
    return (grid.axis,) * n, x_density, (p_axis,) * n, p_density


def singular_decay_moment(source: PhaseField | MixedState, potential: PotentialSpec) -> float:
    """int (|p|^4 + dist(x, S)^-2) dmu; the distance term is absent when S is empty."""
    p4, dist = singular_decay_terms(source, potential)
    return p4 + dist


def singular_decay_terms(source: PhaseField | MixedState, potential: PotentialSpec) -> Tuple[float, float]:
    if isinstance(source, MixedState):
        x_axes, x_density, p_axes, p_density = _husimi_marginals(source)
    else:
        x_axes, p_axes = source.lattice.x_axes, source.lattice.p_axes
        x_density = np.real(marginals(source, "x"))
        p_density = np.real(marginals(source, "p"))
    dx = float(np.prod([a[1] - a[0] for a in x_axes]))
    dp = float(np.prod([a[1] - a[0] for a in p_axes]))
    p2 = sum(np.meshgrid(*[a ** 2 for a in p_axes], indexing="ij"))
    p4 = float(np.sum(p2 ** 2 * p_density) * dp)
    if not potential.has_singular:
        return p4, 0.0
    points = np.stack(np.meshgrid(*x_axes, indexing="ij"), axis=-1)
    d = potential.singular_set.distance(points)
    off = d > 0
    if not np.all(off):
        logging.warning(f"{int((~off).sum())} lattice cell(s) on the singular set excluded from the decay moment")
    dist = float(np.sum(np.where(off, x_density / np.where(off, d, 1.0) ** 2, 0.0)) * dx)
    return p4, dist


def _fourier_axis(factors: Sequence[Factor], min_step: Optional[float] = None) -> np.ndarray:
    """Symmetric y grid resolving the oscillation and the decay of the factors' transforms."""
    reach = max(max(abs(f.extent[0]), abs(f.extent[1])) for f in factors)
    width = min(f.extent[1] - f.extent[0] for f in factors)
    step = np.pi / (4 * max(reach, 1e-3))
    if min_step is not None:
        step = min(step, min_step)
    Y = 64.0 / max(width, 1e-3)
    while True:
        y = np.arange(-Y, Y + step / 2, step)
        magnitude = np.abs(functools.reduce(np.add, [np.abs(f.fourier(y)) for f in factors]))
        total = magnitude.sum()
        tail = magnitude[np.abs(y) > 0.8 * Y].sum()
        if total == 0 or tail <= 1e-10 * total or Y > 4096:
            return y
        Y *= 2


def fourier_sup_integral(phi: TestFunction, power: int = 1, x_box: Tuple[float, float] = (-8.0, 8.0)) -> float:
    """
    int |y|^power sup_z |F_p phi(z, y)| dy. Exact on a sampled z line in one
    dimension; for n >= 2 the triangle inequality and |y| <= sum |y_i| give
    an upper bound.
    """
    n = phi.dim
    if n == 1:
        y = _fourier_axis([t.p_factors[0] for t in phi.terms])
        lo = min((t.x_factors[0].extent or x_box)[0] for t in phi.terms)
        hi = max((t.x_factors[0].extent or x_box)[1] for t in phi.terms)
        z = np.linspace(lo, hi, 2049)
        A = np.stack([t.coefficient * t.x_factors[0].value(z) for t in phi.terms])
        B = np.stack([t.p_factors[0].fourier(y) for t in phi.terms])
        sup = np.zeros(y.size)
        for start in range(0, y.size, 512):
            block = np.abs(A.T @ B[:, start:start + 512])
            sup[start:start + 512] = block.max(axis=0)
        return float(scipy.integrate.trapezoid(np.abs(y) ** power * sup, x=y))
    total = 0.0
    for term in phi.terms:
        sup_a = float(np.prod([f.sup(box=x_box) for f in term.x_factors]))
        plain, moment = [], []
        for factor in term.p_factors:
            y = _fourier_axis([factor])
            values = np.abs(factor.fourier(y))
            plain.append(float(scipy.integrate.trapezoid(values, x=y)))
            moment.append(float(scipy.integrate.trapezoid(np.abs(y) * values, x=y)))
        if power == 0:
            weight = float(np.prod(plain))
        else:
            weight = sum(moment[i] * float(np.prod(plain[:i] + plain[i + 1:])) for i in range(n))
        total += abs(term.coefficient) * sup_a * weight
    return total


def derivative_constants(phi: TestFunction, x_box: Tuple[float, float] = (-8.0, 8.0)) -> Dict[str, float]:
    """
    C_phi^(1) = int |y| sup_z |F_p phi| dy and
    C_phi^(2) = int sup_z |div_z F_p(p phi)| dy + (1/2) int |y| sup_z |grad_z F_p phi| dy,
    the latter at the worst case eps = 1.
    """
    c1 = fourier_sup_integral(phi, 1, x_box)
    transport = fourier_sup_integral(phi.transport(), 0, x_box)
    gradient = sum(fourier_sup_integral(phi.x_derivative(i), 1, x_box) for i in range(phi.dim))
    return {"C_phi1": c1, "C_phi2": transport + 0.5 * gradient, "C_phi2_transport": transport,
            "C_phi2_gradient": gradient}


def difference_quotient_constant(potential: PotentialSpec) -> float:
    """C_* = 1 / ((2 pi)^n c) with c the lower constant of the singular terms."""
    if not potential.has_singular:
        return 0.0
    return 1.0 / ((2 * np.pi) ** potential.dim * potential.singular_set.lower_constant)


def time_derivative_bound(trajectory: Trajectory, potential: PotentialSpec, phi: TestFunction,
                          c1: Optional[float] = None, slack: Optional[float] = None) -> BoundReport:
    """
    sup_t |d/dt <W~_t, phi>| by centred differences against
    ||grad U_b||/(2 pi)^n C_phi^(1) + C_* C_1 C_phi^(1) + C_phi^(2)/(2 pi)^n.
    """
    times = _check_series(trajectory)
    state0 = trajectory.states[0]
    n, halfwidth = state0.dim, state0.grid.halfwidth
    smoothed = phi.smoothed(state0.eps)
    series = np.array([KernelPairing(s).wigner_moments([smoothed])[0] for s in trajectory.states])
    measured = float(np.max(np.abs(np.gradient(series, times, edge_order=2))))
    constants = derivative_constants(phi, (-halfwidth, halfwidth))
    grad_ub = rough_gradient_sup(potential, halfwidth)
    c_star = difference_quotient_constant(potential)
    if c1 is None:
        c1 = max(singular_square_expectation(s, potential) for s in trajectory.states)
    terms = {
        "rough": grad_ub / (2 * np.pi) ** n * constants["C_phi1"],
        "singular": c_star * c1 * constants["C_phi1"],
        "transport": constants["C_phi2"] / (2 * np.pi) ** n,
    }
    report = BoundReport(constants={**constants, "C_star": c_star, "C1": c1, "grad_Ub_sup": grad_ub})
    report.add(f"time_derivative[{phi.label}]", measured, sum(terms.values()), terms=terms,
               parameters={"eps": state0.eps, "dt_record": float(times[1] - times[0])},
               slack=settings.BOUND_SLACK if slack is None else slack)
    return report


def _rough_part(potential: PotentialSpec) -> PotentialSpec:
    return PotentialSpec(potential.dim, potential.rough, (), potential.name)


def _singular_part(potential: PotentialSpec) -> PotentialSpec:
    return PotentialSpec(potential.dim, CATALOG["zero"](potential.dim), potential.singular, potential.name)


def apriori_bound_check(state: MixedState, potential: PotentialSpec, phi1: Factor, phi2: Factor,
                        lambdas: Sequence[float] = (1.0, 0.3, 0.1), constant: Optional[float] = None,
                        slack: Optional[float] = None) -> BoundReport:
    """
    |<E'(U_b, rho), phi1 (x) phi2>| against the four-term bound
    ||phi1||_1 ||grad U_b|| sup |y||phi2^ - phi2^ * G_lam|
    + sqrt(lam) ||grad A||_inf ||phi2^||_1 int |u| G_1
    + sqrt(C) ||grad A||_2 (2 pi lam)^(-n/4) int |z||phi2^|
    + ||U_b|| ||grad phi1|| int |y||phi2^ * G_lam|, with A = U_b phi1.
    """
    if state.dim != 1:
        raise ParameterError("the a priori estimate is checked on one-dimensional states")
    if phi1.extent is None or phi2.extent is None:
        raise ParameterError("both factors of the a priori check need bounded support")
    n = 1
    halfwidth = state.grid.halfwidth
    rough = _rough_part(potential)
    phi = TestFunction.separable((phi1,), (phi2,), label="apriori")
    lhs = abs(error_term_paired(state, rough, phi, "full"))
    x = np.linspace(*phi1.extent, 4097)
    a = phi1.value(x)
    u = rough.rough.value(x[:, None])
    du = rough.rough.gradient(x[:, None])[:, 0]
    grad_a = du * a + u * phi1.derivative(x)
    phi1_l1 = float(scipy.integrate.trapezoid(np.abs(a), x=x))
    grad_phi1 = float(np.max(np.abs(phi1.derivative(x))))
    grad_a_sup = float(np.max(np.abs(grad_a)))
    grad_a_l2 = float(np.sqrt(scipy.integrate.trapezoid(grad_a ** 2, x=x)))
    grad_ub = rough_gradient_sup(rough, halfwidth)
    ub_sup = rough_sup(rough, halfwidth)
    constant = disop_constant(state) if constant is None else constant
    mean_abs = scipy.special.gamma((n + 1) / 2) / scipy.special.gamma(n / 2)
    report = BoundReport(constants={
        "C": constant, "grad_Ub_sup": grad_ub, "Ub_sup": ub_sup, "phi1_L1": phi1_l1,
        "grad_phi1_sup": grad_phi1, "grad_A_sup": grad_a_sup, "grad_A_L2": grad_a_l2,
    })
    step = np.sqrt(min(lambdas)) / 8
    y = _fourier_axis([phi2], min_step=step)
    y = np.arange(y[0] - 8 * np.sqrt(max(lambdas)), y[-1] + 8 * np.sqrt(max(lambdas)), y[1] - y[0])
    dy = y[1] - y[0]
    hat = phi2.fourier(y)
    hat_l1 = float(scipy.integrate.trapezoid(np.abs(hat), x=y))
    hat_moment = float(scipy.integrate.trapezoid(np.abs(y) * np.abs(hat), x=y))
    for lam in lambdas:
        # G_lam(y) = exp(-y^2 / lam) / sqrt(pi lam) has standard deviation sqrt(lam / 2)
        sigma = np.sqrt(lam / 2) / dy
        blurred = (scipy.ndimage.gaussian_filter1d(hat.real, sigma, mode="constant", truncate=8.0)
                   + 1j * scipy.ndimage.gaussian_filter1d(hat.imag, sigma, mode="constant", truncate=8.0))
        terms = {
            "fourier_gap": phi1_l1 * grad_ub * float(np.max(np.abs(y) * np.abs(hat - blurred))),
            "commutator": np.sqrt(lam) * grad_a_sup * hat_l1 * mean_abs,
            "smoothed_density": np.sqrt(constant) * grad_a_l2 / (2 * np.pi * lam) ** (n / 4) * hat_moment,
            "window_quotients": ub_sup * grad_phi1 * float(
                scipy.integrate.trapezoid(np.abs(y) * np.abs(blurred), x=y)),
        }
        report.add(f"apriori[lambda={lam:g}]", lhs, sum(terms.values()), terms=terms,
                   parameters={"lambda": lam, "eps": state.eps},
                   slack=settings.BOUND_SLACK if slack is None else slack)
    return report


def coulomb_pairing_bound(state: MixedState, potential: PotentialSpec, phi: TestFunction,
                          slack: Optional[float] = None) -> BoundReport:
    """|<E'(U_s, rho), phi>| <= C_* int |y| sup |F_p phi| dy int U_s^2 rho(x, x) dx."""
    singular = _singular_part(potential)
    lhs = abs(error_term_paired(state, singular, phi, "full"))
    c_star = difference_quotient_constant(singular)
    moment = singular_square_expectation(state, singular)
    c_phi = fourier_sup_integral(phi, 1, (-state.grid.halfwidth, state.grid.halfwidth))
    report = BoundReport(constants={"C_star": c_star, "Us2_moment": moment, "C_phi1": c_phi})
    report.add(f"coulomb_pairing[{phi.label}]", lhs, c_star * c_phi * moment,
               terms={"C_star": c_star, "C_phi1": c_phi, "Us2_moment": moment},
               parameters={"eps": state.eps}, slack=settings.BOUND_SLACK if slack is None else slack)
    return report
