"""
Wigner and Husimi transforms of finite-rank states, their marginals, Weyl
symbols and the truncated Moyal product.

The Wigner transform is sampled through half-cell shifts: the kernel
rho(x + m dx / 2, x - m dx / 2) is taken at y_m = m dx / eps, the odd m
from the spectral interpolant at the cell midpoints. Zero-padded to 2N
shifts, the FFT over m lands on p_j = pi eps j / (N dx), j = -N .. N - 1,
the whole band |p| < pi eps / dx of the grid.
"""
from __future__ import annotations

import functools
import itertools
import logging
from dataclasses import dataclass, field
from math import factorial
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import scipy.fft

from semiclassic_lab.config import settings
from semiclassic_lab.errors import ParameterError, ResolutionError, TransformConsistencyError
from semiclassic_lab.models.report import Report
from semiclassic_lab.physics.grid import PhaseField, PhaseLattice, SpaceGrid, spectral_derivative
from semiclassic_lab.physics.potentials import (
    PotentialSpec,
    eval_gradient,
    eval_potential,
    laplacian,
    make_potential,
    potential_on_grid,
)
from semiclassic_lab.physics.states import (
    MixedState,
    coherent_family,
    kernel_diagonal,
    momentum_density,
    observable_expectation,
    quadratic_form,
)

Exponent = Tuple[int, ...]


def momentum_spacing(grid: SpaceGrid, eps: float) -> float:
    return np.pi * eps / (grid.points * grid.spacing)


def momentum_band(grid: SpaceGrid, eps: float) -> float:
    """Half-width of the momentum band the grid represents."""
    return np.pi * eps / grid.spacing


def wigner_lattice(grid: SpaceGrid, eps: float) -> PhaseLattice:
    p = momentum_spacing(grid, eps) * (np.arange(2 * grid.points) - grid.points)
    return PhaseLattice(tuple([grid.axis] * grid.dim), tuple([p] * grid.dim))


def husimi_lattice(grid: SpaceGrid, eps: float) -> PhaseLattice:
    """Both Husimi routes share the Wigner lattice."""
    return wigner_lattice(grid, eps)


def check_wigner_resolution(state: MixedState) -> Report:
    grid = state.grid
    report = Report(name="wigner_resolution")
    ratio = grid.spacing / np.sqrt(state.eps)
    report.add("spacing_ratio", ratio, bound=settings.WIGNER_RESOLUTION_FACTOR)
    density = momentum_density(state)
    p_box = momentum_band(grid, state.eps)
    outside = np.logical_or.reduce([np.abs(state.eps * k) >= p_box for k in grid.wavenumber_mesh()])
    tail = float(np.sum(density[outside]) / np.sum(density))
    report.add("momentum_tail", tail, bound=settings.MOMENTUM_TAIL_TOLERANCE)
    report.constants.update({"p_box": p_box, "dx": grid.spacing})
    return report


def half_shifted(mode: np.ndarray, grid: SpaceGrid) -> np.ndarray:
    """
    The band-limited interpolant of `mode` on the 2^n grids offset by half
    a cell along every subset of axes; bit a of the leading index marks
    an offset along axis a.
    """
    n = grid.dim
    k = 2 * np.pi * scipy.fft.fftfreq(grid.points, d=grid.spacing)
    phase = np.exp(0.5j * k * grid.spacing)
    hat = scipy.fft.fftn(mode, workers=settings.FFT_WORKERS)
    out = np.empty((2 ** n,) + mode.shape, dtype=complex)
    out[0] = mode
    for pattern in range(1, 2 ** n):
        shifted = hat
        for axis in range(n):
            if pattern >> axis & 1:
                view = [1] * n
                view[axis] = -1
                shifted = shifted * phase.reshape(view)
        out[pattern] = scipy.fft.ifftn(shifted, workers=settings.FFT_WORKERS)
    return out


def split_shift(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    x + m dx / 2 = x_{k + floor(m/2)} and x - m dx / 2 = x_{k - ceil(m/2)},
    both offset by half a cell when m is odd.
    """
    m = np.asarray(m, dtype=int)
    return np.floor_divide(m, 2), -np.floor_divide(-m, 2), np.mod(m, 2)


def _shift_indices(grid: SpaceGrid, m: np.ndarray):
    """Offset pattern and per-axis indices of x +- m dx / 2, broadcast over (x, m)."""
    n, N = grid.dim, grid.points
    k = np.arange(N)
    up, down, odd = split_shift(m)
    pattern = np.zeros([1] * (2 * n), dtype=int)
    plus, minus = [], []
    for axis in range(n):
        shape = [1] * (2 * n)
        shape[axis] = N
        shape[n + axis] = m.size
        plus.append(((k[:, None] + up[None, :]) % N).reshape(shape))
        minus.append(((k[:, None] - down[None, :]) % N).reshape(shape))
        view = [1] * (2 * n)
        view[n + axis] = m.size
        pattern = pattern + (odd << axis).reshape(view)
    return pattern, tuple(plus), tuple(minus)


def wigner(state: MixedState, check: bool = True) -> PhaseField:
    grid, eps, n = state.grid, state.eps, state.dim
    N = grid.points
    if check:
        report = check_wigner_resolution(state)
        if not report.passed:
            worst = report.failures()[0]
            raise ResolutionError(
                f"grid does not resolve the Wigner transform: {worst.name}={worst.value:.3e} "
                f"(bound {worst.bound:.3e}); refine dx to <= {settings.WIGNER_RESOLUTION_FACTOR}*sqrt(eps) "
                f"or widen the momentum box"
            )
    # separations up to +-L, the two end shifts at half weight
    m = np.arange(-(N // 2), N // 2 + 1)
    taper = np.ones(m.size)
    taper[[0, -1]] = 0.5
    taper = functools.reduce(np.multiply.outer, [taper] * n).reshape((1,) * n + (m.size,) * n)
    pattern, plus, minus = _shift_indices(grid, m)
    kernel = np.zeros((N,) * n + (2 * N,) * n, dtype=complex)
    window = (Ellipsis,) + np.ix_(*[m % (2 * N)] * n)
    for weight, mode in zip(state.weights, state.modes):
        shifted = half_shifted(mode, grid)
        kernel[window] += weight * taper * shifted[(pattern,) + plus] * np.conj(shifted[(pattern,) + minus])
    shift_axes = tuple(range(n, 2 * n))
    spectrum = scipy.fft.fftn(kernel, axes=shift_axes, workers=settings.FFT_WORKERS)
    spectrum = scipy.fft.fftshift(spectrum, axes=shift_axes)
    values = spectrum * ((grid.spacing / eps) ** n / (2 * np.pi) ** n)
    imag = float(np.max(np.abs(values.imag)))
    scale = max(1.0, float(np.max(np.abs(values.real))))
    if imag > settings.WIGNER_REALNESS_TOLERANCE * scale:
        raise TransformConsistencyError(f"Wigner transform has imaginary residue {imag:.3e}", discrepancy=imag)
    return PhaseField(wigner_lattice(grid, eps), values.real, "wigner", eps=eps,
                      mass=float(np.sum(state.weights)), metadata={"imag_residue": imag})


def padded_gaussian(values: np.ndarray, spacings: Sequence[float], eps: float) -> np.ndarray:
    """
    Linear convolution with G_eps on every axis: zero padding to twice the
    length, Fourier multiplier exp(-eps xi^2 / 4), crop.
    """
    shape = values.shape
    padded = [2 * s for s in shape]
    hat = scipy.fft.rfftn(values, s=padded, workers=settings.FFT_WORKERS)
    multiplier = np.ones(hat.shape)
    for axis, (size, spacing) in enumerate(zip(padded, spacings)):
        last = axis == len(padded) - 1
        xi = 2 * np.pi * (scipy.fft.rfftfreq(size, d=spacing) if last else scipy.fft.fftfreq(size, d=spacing))
        view = [1] * len(padded)
        view[axis] = xi.size
        multiplier = multiplier * np.exp(-eps * xi ** 2 / 4.0).reshape(view)
    out = scipy.fft.irfftn(hat * multiplier, s=padded, workers=settings.FFT_WORKERS)
    return out[tuple(slice(0, s) for s in shape)]


def husimi_via_convolution(wigner_field: PhaseField, eps: Optional[float] = None) -> PhaseField:
    """W * G_eps^(2n) on the Wigner lattice."""
    eps = eps or wigner_field.eps
    values = padded_gaussian(wigner_field.values, wigner_field.lattice.spacings, eps)
    return PhaseField(wigner_field.lattice, values, "husimi", eps=eps, mass=wigner_field.mass,
                      metadata={"route": "convolution"})


def husimi_via_overlap(state: MixedState) -> PhaseField:
    """
    (2 pi eps)^(-1) sum_j mu_j |<phi_{x,p}, phi_j>|^2 on the whole Husimi
    lattice; one zero-padded FFT per position and mode.
    """
    grid, eps = state.grid, state.eps
    if grid.dim != 1:
        raise ParameterError("the full-lattice overlap route is one-dimensional; use husimi_at for probes")
    N = grid.points
    x = grid.axis
    window = (np.pi * eps) ** (-0.25) * np.exp(-(x[None, :] - x[:, None]) ** 2 / (2 * eps))
    values = np.zeros((N, 2 * N))
    for weight, mode in zip(state.weights, state.modes):
        amplitude = scipy.fft.fft(window * mode[None, :], n=2 * N, axis=1, workers=settings.FFT_WORKERS)
        values += weight * np.abs(amplitude * grid.spacing) ** 2
    values = scipy.fft.fftshift(values, axes=1) / (2 * np.pi * eps)
    return PhaseField(husimi_lattice(grid, eps), values, "husimi", eps=eps,
                      mass=float(np.sum(state.weights)), metadata={"route": "overlap"})


def husimi_at(state: MixedState, centers: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Husimi values at arbitrary (x, p) centres of shape (R, 2n)."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2 * state.dim)
    out = np.empty(len(centers))
    for start in range(0, len(centers), chunk):
        family = coherent_family(state.grid, centers[start:start + chunk], state.eps)
        out[start:start + chunk] = quadratic_form(state, family)
    return out / (2 * np.pi * state.eps) ** state.dim


def husimi_on_lattice(state: MixedState, lattice: PhaseLattice) -> PhaseField:
    """Husimi transform on an arbitrary tensor lattice, one separable contraction per axis."""
    grid, eps, n = state.grid, state.eps, state.dim
    if lattice.dim != n:
        raise ParameterError(f"lattice dimension {lattice.dim} does not match state dimension {n}")
    y = grid.axis
    operators = []
    for x_axis, p_axis in zip(lattice.x_axes, lattice.p_axes):
        window = (np.pi * eps) ** (-0.25) * np.exp(-(y[None, :] - x_axis[:, None]) ** 2 / (2 * eps))
        phase = np.exp(-1j * p_axis[:, None] * y[None, :] / eps)
        operators.append((window[:, None, :] * phase[None, :, :] * grid.spacing).reshape(-1, grid.points))
    values = np.zeros(tuple(len(a) * len(b) for a, b in zip(lattice.x_axes, lattice.p_axes)))
    for weight, mode in zip(state.weights, state.modes):
        amplitude = mode
        for axis, operator in enumerate(operators):
            amplitude = np.moveaxis(np.tensordot(amplitude, operator, axes=([axis], [1])), -1, axis)
        values += weight * np.abs(amplitude) ** 2
    split = []
    for x_axis, p_axis in zip(lattice.x_axes, lattice.p_axes):
        split += [len(x_axis), len(p_axis)]
    order = [2 * i for i in range(n)] + [2 * i + 1 for i in range(n)]
    values = values.reshape(split).transpose(order) / (2 * np.pi * eps) ** n
    return PhaseField(lattice, values, "husimi", eps=eps, metadata={"route": "overlap"})


def husimi(state: MixedState, wigner_field: Optional[PhaseField] = None, check_routes: bool = True,
           samples: int = 64, seed: Optional[int] = None) -> PhaseField:
    """
    Husimi transform with both routes compared. In one dimension the
    overlap route is returned (exactly nonnegative); otherwise the
    convolution route, spot-checked against direct overlaps.
    """
    wigner_field = wigner_field or wigner(state)
    by_convolution = husimi_via_convolution(wigner_field, state.eps)
    if not check_routes:
        return by_convolution
    if state.dim == 1:
        by_overlap = husimi_via_overlap(state)
        gap = float(np.max(np.abs(by_convolution.values - by_overlap.values)))
        result = by_overlap
    else:
        rng = np.random.default_rng(settings.DEFAULT_SEED if seed is None else seed)
        flat = by_convolution.values.reshape(-1)
        picks = np.unique(np.concatenate([[int(np.argmax(flat))], rng.integers(0, flat.size, samples)]))
        index = np.unravel_index(picks, by_convolution.values.shape)
        axes = by_convolution.lattice.x_axes + by_convolution.lattice.p_axes
        centers = np.stack([axis[i] for axis, i in zip(axes, index)], axis=-1)
        gap = float(np.max(np.abs(flat[picks] - husimi_at(state, centers))))
        result = by_convolution
    lowest = float(np.min(result.values))
    if lowest < -settings.HUSIMI_POSITIVITY_TOLERANCE and state.dim == 1:
        raise TransformConsistencyError(f"overlap Husimi route is negative ({lowest:.3e})", discrepancy=-lowest)
    if gap > settings.HUSIMI_ROUTE_TOLERANCE:
        raise TransformConsistencyError(f"Husimi routes disagree by {gap:.3e} in sup norm", discrepancy=gap)
    logging.info(f"Husimi routes agree to {gap:.2e}")
    return result.with_values(result.values, route_gap=gap)


def marginals(field: PhaseField, which: Literal["x", "p"]) -> np.ndarray:
    """Integrate out the other variable; the x-marginal is a density in x."""
    n = field.lattice.dim
    spacings = field.lattice.spacings
    if which == "x":
        axes, volume = tuple(range(n, 2 * n)), float(np.prod(spacings[n:]))
    elif which == "p":
        axes, volume = tuple(range(n)), float(np.prod(spacings[:n]))
    else:
        raise ParameterError(f"marginal variable must be 'x' or 'p', got '{which}'")
    return np.sum(field.values, axis=axes) * volume


def momentum_on_lattice(state: MixedState) -> np.ndarray:
    """
    (2 pi eps)^(-n) sum_j mu_j |phi_hat_j(p/eps)|^2 on the Wigner momentum
    lattice, by zero-padded FFT.
    """
    grid, n, N = state.grid, state.dim, state.grid.points
    axes = tuple(range(1, n + 1))
    hat = scipy.fft.fftn(state.modes, s=(2 * N,) * n, axes=axes, workers=settings.FFT_WORKERS)
    power = np.tensordot(state.weights, np.abs(hat) ** 2, axes=1) * grid.cell_volume ** 2
    return scipy.fft.fftshift(power) / (2 * np.pi * state.eps) ** n


def marginal_report(state: MixedState, wigner_field: Optional[PhaseField] = None,
                    husimi_field: Optional[PhaseField] = None) -> Report:
    wigner_field = wigner_field or wigner(state)
    husimi_field = husimi_field or husimi(state, wigner_field)
    grid, eps = state.grid, state.eps
    dp = wigner_field.lattice.spacings[state.dim]
    diagonal = kernel_diagonal(state)
    report = Report(name="marginals")
    tolerance = settings.MARGINAL_TOLERANCE
    report.add("wigner_x", float(np.max(np.abs(marginals(wigner_field, "x") - diagonal))), bound=tolerance)
    report.add("wigner_p", float(np.max(np.abs(marginals(wigner_field, "p") - momentum_on_lattice(state)))),
               bound=tolerance)
    smoothed_x = padded_gaussian(diagonal, [grid.spacing] * state.dim, eps)
    report.add("husimi_x", float(np.max(np.abs(marginals(husimi_field, "x") - smoothed_x))), bound=tolerance)
    smoothed_p = padded_gaussian(momentum_on_lattice(state), [dp] * state.dim, eps)
    report.add("husimi_p", float(np.max(np.abs(marginals(husimi_field, "p") - smoothed_p))), bound=tolerance)
    report.add("wigner_mass", abs(wigner_field.integral() - float(np.sum(state.weights))), bound=tolerance)
    report.add("husimi_mass", abs(husimi_field.integral() - float(np.sum(state.weights))), bound=tolerance)
    return report


@dataclass
class WeylSymbol:
    """
    Symbol sigma_eps(A). Polynomial in p: exponent tuple -> coefficient over
    the x grid. A finite-rank density is held densely on its Wigner lattice.
    """
    grid: SpaceGrid
    eps: float
    tag: str
    terms: Dict[Exponent, np.ndarray] = field(default_factory=dict)
    dense: Optional[PhaseField] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def polynomial(self) -> bool:
        return self.dense is None

    def degree_p(self) -> int:
        if not self.polynomial:
            raise ParameterError("dense symbols have no polynomial degree")
        return max((sum(e) for e in self.terms), default=0)

    def on_lattice(self, lattice: PhaseLattice) -> np.ndarray:
        if not self.polynomial:
            if not self.dense.lattice.same_as(lattice):
                raise ResolutionError("dense symbol lives on a different lattice")
            return self.dense.values
        if any(not np.allclose(a, self.grid.axis, rtol=0, atol=1e-12) for a in lattice.x_axes):
            raise ResolutionError("lattice x axes must coincide with the symbol grid")
        n = self.grid.dim
        p_mesh = np.meshgrid(*lattice.p_axes, indexing="ij", sparse=True)
        values = np.zeros(lattice.shape, dtype=complex)
        for exponent, coefficient in self.terms.items():
            monomial = np.ones([1] * n)
            for p, e in zip(p_mesh, exponent):
                monomial = monomial * p ** e
            values = values + coefficient.reshape(coefficient.shape + (1,) * n) * monomial.reshape((1,) * n + monomial.shape)
        return values

    def is_real(self, tolerance: float = 1e-10) -> bool:
        if not self.polynomial:
            return True
        return all(float(np.max(np.abs(np.imag(c)))) <= tolerance for c in self.terms.values())


def _unit(n: int, axis: int, power: int) -> Exponent:
    e = [0] * n
    e[axis] = power
    return tuple(e)


def weyl_symbol(operator: str, grid: SpaceGrid, eps: float, potential: Optional[PotentialSpec] = None,
                values: Optional[np.ndarray] = None, state: Optional[MixedState] = None) -> WeylSymbol:
    """
    Symbols of: "identity", "multiplication" (values or potential),
    "laplacian" (-eps^2 Lap), "kinetic" (-eps^2 Lap / 2), "hamiltonian",
    "density" (finite-rank state, (2 pi eps)^n W).
    """
    n = grid.dim
    zero = (0,) * n
    if operator == "identity":
        return WeylSymbol(grid, eps, operator, {zero: np.ones(grid.shape)})
    if operator in ("multiplication", "hamiltonian"):
        if values is None:
            if potential is None:
                raise ParameterError(f"operator '{operator}' needs a potential or values")
            values = potential_on_grid(potential, grid)
        terms = {zero: np.asarray(values, dtype=float)}
        if operator == "hamiltonian":
            terms.update({_unit(n, i, 2): np.full(grid.shape, 0.5) for i in range(n)})
        return WeylSymbol(grid, eps, operator, terms)
    if operator in ("laplacian", "kinetic"):
        scale = 1.0 if operator == "laplacian" else 0.5
        return WeylSymbol(grid, eps, operator, {_unit(n, i, 2): np.full(grid.shape, scale) for i in range(n)})
    if operator == "density":
        if state is None:
            raise ParameterError("operator 'density' needs a state")
        w = wigner(state)
        dense = w.with_values((2 * np.pi * eps) ** n * w.values, tag="symbol")
        return WeylSymbol(grid, eps, operator, dense=dense)
    raise ParameterError(f"unsupported operator '{operator}'")


def _multi_indices(n: int, total: int):
    return [a for a in itertools.product(range(total + 1), repeat=n) if sum(a) == total]


def _p_derivative(terms: Dict[Exponent, np.ndarray], alpha: Exponent) -> Dict[Exponent, np.ndarray]:
    out: Dict[Exponent, np.ndarray] = {}
    for exponent, coefficient in terms.items():
        if all(e >= a for e, a in zip(exponent, alpha)):
            factor = np.prod([factorial(e) // factorial(e - a) for e, a in zip(exponent, alpha)])
            key = tuple(e - a for e, a in zip(exponent, alpha))
            out[key] = out.get(key, 0) + factor * coefficient
    return out


_EDGE_DEGREE = 4
_EDGE_POINTS = 8


def symbol_derivative(coefficient: np.ndarray, grid: SpaceGrid, axis: int, order: int = 1) -> np.ndarray:
    """
    d_x^order of a symbol coefficient by Fourier multiplication. A coefficient
    that is not periodic on the box (x, |x|^2, a quartic well) is first split
    into a polynomial fitted on the two edge slabs, differentiated exactly,
    and a remainder that is.
    """
    values = np.broadcast_to(coefficient, grid.shape)
    if order == 0:
        return np.array(values)
    lines = np.moveaxis(values, axis, 0).reshape(grid.points, -1)
    hat = np.abs(scipy.fft.fft(lines, axis=0, workers=settings.FFT_WORKERS))
    quarter = grid.points // 4
    tail = float(np.max(hat[quarter:grid.points - quarter], initial=0.0))
    slope = np.zeros(lines.shape)
    if tail > settings.SYMBOL_TAIL_TOLERANCE * float(np.max(hat, initial=0.0)):
        t = grid.axis / grid.halfwidth
        edge = np.r_[:_EDGE_POINTS, grid.points - _EDGE_POINTS:grid.points]
        fit = np.polynomial.polynomial.polyfit(t[edge], lines[edge], _EDGE_DEGREE)
        lines = lines - np.polynomial.polynomial.polyval(t, fit).T
        slope = np.polynomial.polynomial.polyval(
            t, np.polynomial.polynomial.polyder(fit, order)).T / grid.halfwidth ** order
    derived = spectral_derivative(lines, grid, 0, order) + slope
    if np.isrealobj(values):
        derived = np.real(derived)
    moved = np.moveaxis(values, axis, 0).shape
    return np.moveaxis(derived.reshape(moved), 0, axis)


def _x_derivative(terms: Dict[Exponent, np.ndarray], beta: Exponent, grid: SpaceGrid) -> Dict[Exponent, np.ndarray]:
    out = {}
    for exponent, coefficient in terms.items():
        for axis, order in enumerate(beta):
            coefficient = symbol_derivative(coefficient, grid, axis, order)
        out[exponent] = coefficient
    return out


def _product(f: Dict[Exponent, np.ndarray], g: Dict[Exponent, np.ndarray]) -> Dict[Exponent, np.ndarray]:
    out: Dict[Exponent, np.ndarray] = {}
    for ef, cf in f.items():
        for eg, cg in g.items():
            key = tuple(a + b for a, b in zip(ef, eg))
            out[key] = out.get(key, 0) + cf * cg
    return out


def _moyal_order(f: WeylSymbol, g: WeylSymbol, total: int) -> Dict[Exponent, np.ndarray]:
    """Sum over |alpha| + |beta| = total of the expansion terms."""
    n, eps = f.grid.dim, f.eps
    out: Dict[Exponent, np.ndarray] = {}
    for a in range(total + 1):
        for alpha in _multi_indices(n, a):
            for beta in _multi_indices(n, total - a):
                weight = (1j * eps / 2) ** total * (-1) ** a / (
                    np.prod([factorial(i) for i in alpha]) * np.prod([factorial(i) for i in beta]))
                left = _x_derivative(_p_derivative(f.terms, alpha), beta, f.grid)
                right = _x_derivative(_p_derivative(g.terms, beta), alpha, f.grid)
                for key, value in _product(left, right).items():
                    out[key] = out.get(key, 0) + weight * value
    return out


def moyal_sharp(f: WeylSymbol, g: WeylSymbol, order: int = 2) -> WeylSymbol:
    """
    f # g = sum (i eps/2)^(|a|+|b|) (-1)^|a| / (a! b!) d_x^b d_p^a f . d_p^b d_x^a g,
    truncated at |a| + |b| <= order. Exact once every dropped term vanishes,
    which is always the case for order >= deg_p f + deg_p g.
    """
    if not (f.polynomial and g.polynomial):
        raise ParameterError("the Moyal product is implemented for symbols polynomial in p")
    if f.grid != g.grid or f.eps != g.eps:
        raise ParameterError("symbols live on different grids or eps")
    terms: Dict[Exponent, np.ndarray] = {}
    for total in range(order + 1):
        for key, value in _moyal_order(f, g, total).items():
            terms[key] = terms.get(key, 0) + value
    result = WeylSymbol(f.grid, f.eps, f"{f.tag}#{g.tag}", terms)
    for total in range(order + 1, f.degree_p() + g.degree_p() + 1):
        dropped = _moyal_order(f, g, total)
        size = max((float(np.max(np.abs(v))) for v in dropped.values()), default=0.0)
        if size > 0:
            message = f"Moyal expansion truncated at order {order}; the order-{total} term has size {size:.3e}"
            logging.warning(message)
            result.warnings.append(message)
            break
    return result


def trace_pairing(symbol: WeylSymbol, state: Optional[MixedState] = None,
                  wigner_field: Optional[PhaseField] = None) -> float:
    """tr(A rho) = int sigma(A) W dx dp on the Wigner lattice."""
    if wigner_field is None:
        if state is None:
            raise ParameterError("trace pairing needs a state or its Wigner field")
        wigner_field = wigner(state)
    values = symbol.on_lattice(wigner_field.lattice)
    return float(np.real(np.sum(values * wigner_field.values)) * wigner_field.lattice.cell_volume)


def _lattice_derivative(values: np.ndarray, axis: int, spacing: float, order: int) -> np.ndarray:
    if order == 0:
        return values
    k = 2 * np.pi * scipy.fft.fftfreq(values.shape[axis], d=spacing)
    view = [1] * values.ndim
    view[axis] = k.size
    hat = scipy.fft.fft(values, axis=axis, workers=settings.FFT_WORKERS)
    return np.real(scipy.fft.ifft(hat * ((1j * k) ** order).reshape(view), axis=axis, workers=settings.FFT_WORKERS))


def cv_regularity_check(wigner_field: PhaseField, potential: Optional[PotentialSpec] = None) -> Report:
    """
    Sup norms of d_x^a d_p^b W for |a|, |b| <= [n/2] + 1, and, for smooth U,
    the integral of sigma(H^2) = |p|^4/4 + U^2 + |p|^2 U - eps^2 Lap U / 4
    against W.
    """
    lattice = wigner_field.lattice
    n = lattice.dim
    top = n // 2 + 1
    spacings = lattice.spacings
    report = Report(name="cv_regularity")
    largest = 0.0
    for a in range(top + 1):
        for alpha in _multi_indices(n, a):
            for b in range(top + 1):
                for beta in _multi_indices(n, b):
                    values = wigner_field.values
                    for axis, order in enumerate(alpha + beta):
                        values = _lattice_derivative(values, axis, spacings[axis], order)
                    sup = float(np.max(np.abs(values)))
                    name = "d_x" + "".join(map(str, alpha)) + "_p" + "".join(map(str, beta))
                    report.constants[name] = sup
                    largest = max(largest, sup)
    report.add("max_derivative", largest)

    if potential is not None and potential.smooth:
        eps = wigner_field.eps
        x_mesh = np.stack(np.meshgrid(*lattice.x_axes, indexing="ij"), axis=-1)
        u = eval_potential(potential, x_mesh)
        lap = laplacian(potential, x_mesh)
        p2 = sum(p ** 2 for p in np.meshgrid(*lattice.p_axes, indexing="ij", sparse=True))
        expand = (Ellipsis,) + (None,) * n
        base = p2 ** 2 / 4 + (u ** 2)[expand] + p2 * u[expand]
        volume = lattice.cell_volume
        measured = float(np.sum((base - (eps ** 2 * lap / 4)[expand]) * wigner_field.values) * volume)
        published = float(np.sum((base - (n * eps ** 2 * lap / 2)[expand]) * wigner_field.values) * volume)
        report.constants.update({"second_moment_integral": measured, "second_moment_integral_published": published})
        report.add("second_moment_integral", measured)
    return report


def laplacian_coefficient_oracle(eps: float = 0.5, points: int = 64, halfwidth: float = 4.0,
                                 potential: Optional[PotentialSpec] = None, p_max: float = 1.0) -> Report:
    """
    Compose (-eps^2 Lap) and U as dense band-limited matrices, read off the
    Weyl symbol of the product and fit
        Re sigma = |p|^2 U - c2 eps^2 U'',  Im sigma = -c1 eps p U'.
    """
    grid = SpaceGrid(1, halfwidth, points)
    potential = potential or make_potential(1, "smoothed_well", {"depth": 1.0, "width": 1.0})
    N, dx = points, grid.spacing
    fourier = scipy.fft.fft(np.eye(N), norm="ortho", axis=0)
    inverse = fourier.conj().T
    index = np.rint(scipy.fft.fftfreq(N) * N)
    band = inverse @ np.diag((np.abs(index) < N // 4).astype(float)) @ fourier
    kinetic = inverse @ np.diag(eps ** 2 * grid.wavenumbers ** 2) @ fourier
    u = potential_on_grid(potential, grid)
    product = band @ kinetic @ band @ band @ np.diag(u) @ band

    p = np.linspace(-p_max, p_max, 21)
    inner = np.flatnonzero(np.abs(grid.axis) <= halfwidth / 2)
    m = np.arange(-(N // 2), N // 2)
    sigma = np.empty((inner.size, p.size), dtype=complex)
    for row, i in enumerate(inner):
        diagonal = product[(i + m) % N, (i - m) % N]
        sigma[row] = 2 * np.exp(-2j * np.outer(p, m) * dx / eps) @ diagonal

    x = grid.axis[inner][:, None]
    u_x = eval_potential(potential, x)[:, None]
    du = eval_gradient(potential, x)[:, 0][:, None]
    d2u = laplacian(potential, x)[:, None]
    target_real = p[None, :] ** 2 * u_x - sigma.real
    basis_real = np.broadcast_to(eps ** 2 * d2u, sigma.shape)
    c2 = float(np.sum(target_real * basis_real) / np.sum(basis_real ** 2))
    basis_imag = eps * p[None, :] * du
    c1 = float(-np.sum(sigma.imag * basis_imag) / np.sum(basis_imag ** 2))
    residual = float(np.max(np.abs(sigma.real - (p[None, :] ** 2 * u_x - c2 * basis_real))))
    report = Report(name="laplacian_coefficient")
    report.constants.update({"c1": c1, "c2": c2, "published_c2": 0.5, "fit_residual": residual})
    report.add("fit_residual", residual)
    report.note(f"measured Lap U coefficient {c2:.6f} (published value n/2 = 0.5)")
    logging.info(f"Moyal second-order coefficient measured as {c2:.6f}, first-order {c1:.6f}")
    return report


def trace_of_H_squared(state: MixedState, potential: PotentialSpec, wigner_field: Optional[PhaseField] = None,
                       rtol: float = 1e-4) -> Report:
    """sum_j mu_j ||H phi_j||^2 against the pairing of sigma(H) # sigma(H) with W."""
    wigner_field = wigner_field or wigner(state)
    h = weyl_symbol("hamiltonian", state.grid, state.eps, potential=potential)
    squared = moyal_sharp(h, h, order=2)
    direct = observable_expectation(state, "H_squared_vector", potential=potential)
    paired = trace_pairing(squared, wigner_field=wigner_field)
    report = Report(name="trace_of_H_squared")
    report.constants.update({"direct": direct, "symbol": paired})
    report.add("relative_gap", abs(direct - paired) / max(abs(direct), 1e-300), bound=rtol)
    for message in squared.warnings:
        report.note(message)
    return report
