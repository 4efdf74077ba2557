"""
Uniform lattices on the computational box, the unitary discrete Fourier
pair, Gaussian kernels and quadrature.

Position lattices are cell-centred, x_k = -L + (k + 1/2) dx, so they are
symmetric about the origin and never contain it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Sequence, Tuple

import numpy as np
import scipy.fft

from semiclassic_lab.config import settings
from semiclassic_lab.errors import ParameterError, ResolutionError

FieldTag = Literal["wigner", "husimi", "classical", "residual", "symbol"]


def _is_power_of_two(value: int) -> bool:
    return value > 0 and (value & (value - 1)) == 0


@dataclass(frozen=True)
class SpaceGrid:
    """Cell-centred cubic lattice on [-L, L]^n with N points per axis."""

    dim: int
    halfwidth: float
    points: int

    def __post_init__(self):
        if self.dim < 1:
            raise ParameterError(f"grid dimension must be positive, got {self.dim}")
        if self.halfwidth <= 0:
            raise ParameterError(f"grid halfwidth must be positive, got {self.halfwidth}")
        if not _is_power_of_two(self.points):
            raise ParameterError(f"points per axis must be a power of two, got {self.points}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.halfwidth / self.points

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.halfwidth + (np.arange(self.points) + 0.5) * self.spacing

    @property
    def momentum_spacing(self) -> float:
        """Spacing of the dual wavenumber lattice, pi / L."""
        return np.pi / self.halfwidth

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Wavenumbers in FFT order; they cover |k| <= pi / dx."""
        return 2.0 * np.pi * scipy.fft.fftfreq(self.points, d=self.spacing)

    def mesh(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    def wavenumber_mesh(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.wavenumbers] * self.dim), indexing="ij"))

    def coordinates(self) -> np.ndarray:
        """All lattice points as an array of shape (N^n, n)."""
        return np.stack([m.reshape(-1) for m in self.mesh()], axis=-1)

    def squared_radius(self, center: Sequence[float] | None = None) -> np.ndarray:
        center = np.zeros(self.dim) if center is None else np.asarray(center, dtype=float)
        return sum((m - c) ** 2 for m, c in zip(self.mesh(), center))

    def squared_wavenumber(self) -> np.ndarray:
        return sum(k ** 2 for k in self.wavenumber_mesh())

    def edge_mask(self, fraction: float | None = None) -> np.ndarray:
        """Cells within the outer band of relative width `fraction` on any axis."""
        fraction = settings.BOUNDARY_BAND_FRACTION if fraction is None else fraction
        band = max(1, int(round(fraction * self.points)))
        index = np.arange(self.points)
        near = (index < band) | (index >= self.points - band)
        masks = np.meshgrid(*([near] * self.dim), indexing="ij")
        return np.logical_or.reduce(masks)

    def describe(self) -> dict:
        return {"dim": self.dim, "points": self.points, "halfwidth": self.halfwidth}


@dataclass(frozen=True)
class PhaseLattice:
    """Tensor lattice over (x, p) in R^{2n}, one axis array per coordinate."""

    x_axes: Tuple[np.ndarray, ...]
    p_axes: Tuple[np.ndarray, ...]

    @classmethod
    def uniform(cls, dim: int, x_halfwidth: float, p_halfwidth: float, points: int) -> "PhaseLattice":
        x = -x_halfwidth + (np.arange(points) + 0.5) * (2.0 * x_halfwidth / points)
        p = -p_halfwidth + (np.arange(points) + 0.5) * (2.0 * p_halfwidth / points)
        return cls(tuple([x] * dim), tuple([p] * dim))

    @property
    def dim(self) -> int:
        return len(self.x_axes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(a) for a in self.x_axes + self.p_axes)

    @property
    def spacings(self) -> Tuple[float, ...]:
        return tuple(float(a[1] - a[0]) for a in self.x_axes + self.p_axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def mesh(self) -> Tuple[np.ndarray, ...]:
        """Broadcastable (x_1..x_n, p_1..p_n) coordinate arrays."""
        return tuple(np.meshgrid(*(self.x_axes + self.p_axes), indexing="ij", sparse=True))

    def same_as(self, other: "PhaseLattice") -> bool:
        if self.shape != other.shape:
            return False
        return all(np.allclose(a, b, rtol=0, atol=1e-12) for a, b in
                   zip(self.x_axes + self.p_axes, other.x_axes + other.p_axes))

    def describe(self) -> dict:
        return {
            "dim": self.dim,
            "x_range": [[float(a[0]), float(a[-1]), len(a)] for a in self.x_axes],
            "p_range": [[float(a[0]), float(a[-1]), len(a)] for a in self.p_axes],
        }


@dataclass(frozen=True)
class PhaseField:
    """Scalar field on a phase lattice (Wigner, Husimi, classical density...)."""

    lattice: PhaseLattice
    values: np.ndarray
    tag: FieldTag
    eps: float | None = None
    mass: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != self.lattice.shape:
            raise ParameterError(
                f"field shape {self.values.shape} does not match lattice {self.lattice.shape}"
            )

    def integral(self) -> float:
        return float(np.real(self.values.sum()) * self.lattice.cell_volume)

    def check_mass(self, tolerance: float | None = None) -> float:
        """Quadrature of the field against its recorded mass."""
        tolerance = settings.QUADRATURE_TOLERANCE if tolerance is None else tolerance
        total = self.integral()
        if self.mass is not None and abs(total - self.mass) > tolerance:
            raise ResolutionError(
                f"{self.tag} field integrates to {total!r}, recorded mass {self.mass!r}"
            )
        return total

    def with_values(self, values: np.ndarray, tag: FieldTag | None = None, **metadata) -> "PhaseField":
        # a retagged field is a different quantity and drops the recorded mass
        mass = self.mass if tag is None else None
        return PhaseField(self.lattice, values, tag or self.tag, self.eps, mass,
                          metadata={**self.metadata, **metadata})


@dataclass(frozen=True)
class GaussianKernel:
    """G_eps^(m)(z) = exp(-|z|^2/eps) / (pi eps)^(m/2), variance eps/2 per axis."""

    eps: float
    dim: int = 1

    def __post_init__(self):
        if not self.eps > 0:
            raise ParameterError(f"kernel parameter must be positive, got {self.eps}")
        if self.dim < 1:
            raise ParameterError(f"kernel dimension must be positive, got {self.dim}")

    def resolved_by(self, grid: SpaceGrid) -> bool:
        width = np.sqrt(self.eps)
        return grid.spacing <= width / 4 and grid.halfwidth >= 6 * width

    def multiplier(self, wavenumber_squared: np.ndarray) -> np.ndarray:
        """Fourier multiplier of convolution with the kernel."""
        return np.exp(-self.eps * wavenumber_squared / 4.0)


def gaussian_eval(kernel: GaussianKernel, z) -> np.ndarray | float:
    """Evaluate the kernel at one point (shape (m,)) or at many (shape (..., m))."""
    z = np.asarray(z, dtype=float)
    if kernel.dim == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        squared = z ** 2
    else:
        squared = np.sum(z ** 2, axis=-1)
    value = np.exp(-squared / kernel.eps) / (np.pi * kernel.eps) ** (kernel.dim / 2)
    return float(value) if np.ndim(value) == 0 else value


def kernel_on_grid(kernel: GaussianKernel, grid: SpaceGrid, center=None) -> np.ndarray:
    if kernel.dim != grid.dim:
        raise ParameterError(f"kernel dimension {kernel.dim} does not match grid dimension {grid.dim}")
    return np.exp(-grid.squared_radius(center) / kernel.eps) / (np.pi * kernel.eps) ** (kernel.dim / 2)


def _axes(values: np.ndarray, leading: int) -> Tuple[int, ...]:
    return tuple(range(leading, values.ndim))


def forward_transform(values: np.ndarray, grid: SpaceGrid, leading: int = 0) -> np.ndarray:
    """Unitary DFT over the trailing grid axes (FFT ordering)."""
    if values.shape[leading:] != grid.shape:
        raise ParameterError(f"field shape {values.shape[leading:]} does not match grid {grid.shape}")
    return scipy.fft.fftn(values, axes=_axes(values, leading), norm="ortho", workers=settings.FFT_WORKERS)


def inverse_transform(values: np.ndarray, grid: SpaceGrid, leading: int = 0) -> np.ndarray:
    if values.shape[leading:] != grid.shape:
        raise ParameterError(f"field shape {values.shape[leading:]} does not match grid {grid.shape}")
    return scipy.fft.ifftn(values, axes=_axes(values, leading), norm="ortho", workers=settings.FFT_WORKERS)


def continuous_spectrum(values: np.ndarray, grid: SpaceGrid) -> np.ndarray:
    """Samples of (2 pi)^(-n/2) int f(x) e^{-ikx} dx at grid.wavenumbers."""
    phase = np.exp(-1j * sum(k * grid.axis[0] for k in grid.wavenumber_mesh()))
    scale = (grid.spacing * np.sqrt(grid.points) / np.sqrt(2.0 * np.pi)) ** grid.dim
    return scale * phase * forward_transform(values, grid)


def quadrature(values: np.ndarray, grid: SpaceGrid | PhaseLattice) -> float:
    """Riemann sum times cell volume."""
    total = np.sum(values) * grid.cell_volume
    return float(np.real(total)) if np.isrealobj(values) or abs(np.imag(total)) < 1e-300 else complex(total)


def spectral_derivative(values: np.ndarray, grid: SpaceGrid, axis: int, order: int = 1,
                        leading: int = 0) -> np.ndarray:
    """Derivative along one grid axis by Fourier multiplication (periodic box)."""
    k = grid.wavenumbers
    shape = [1] * values.ndim
    shape[leading + axis] = grid.points
    multiplier = ((1j * k) ** order).reshape(shape)
    hat = scipy.fft.fft(values, axis=leading + axis, workers=settings.FFT_WORKERS)
    return scipy.fft.ifft(hat * multiplier, axis=leading + axis, workers=settings.FFT_WORKERS)


def gaussian_smooth(values: np.ndarray, grid: SpaceGrid, kernel: GaussianKernel, leading: int = 0) -> np.ndarray:
    """Periodic convolution with a Gaussian kernel on the grid."""
    if not kernel.resolved_by(grid):
        logging.warning(f"kernel eps={kernel.eps} is under-resolved on grid dx={grid.spacing:.3g}")
    hat = scipy.fft.fftn(values, axes=_axes(values, leading), workers=settings.FFT_WORKERS)
    hat *= kernel.multiplier(grid.squared_wavenumber())
    return scipy.fft.ifftn(hat, axes=_axes(values, leading), workers=settings.FFT_WORKERS)


def boundary_mass(density: np.ndarray, grid: SpaceGrid, fraction: float | None = None) -> float:
    """Mass of a position density inside the monitored edge band."""
    return float(np.sum(np.real(density)[..., grid.edge_mask(fraction)]) * grid.cell_volume)
