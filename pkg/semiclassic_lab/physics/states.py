"""
Finite-rank mixed states rho = sum_j mu_j |phi_j><phi_j| on a SpaceGrid,
coherent states and the expectations the audits are built from.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Literal, Optional, Sequence

import numpy as np
import scipy.fft
import scipy.linalg

from semiclassic_lab.config import settings
from semiclassic_lab.errors import ParameterError, ResolutionError, StateValidationError
from semiclassic_lab.models.report import Report
from semiclassic_lab.physics.grid import SpaceGrid, forward_transform, inverse_transform
from semiclassic_lab.physics.potentials import PotentialSpec, potential_on_grid, singular_on_grid

Observable = Literal["kinetic", "potential", "H", "H_squared_vector"]


@dataclass(frozen=True)
class MixedState:
    grid: SpaceGrid
    eps: float
    weights: np.ndarray
    modes: np.ndarray
    truncated_weight: float = 0.0
    label: str = ""

    def __post_init__(self):
        if not self.eps > 0:
            raise ParameterError(f"semiclassical parameter must be positive, got {self.eps}")
        if self.modes.shape[1:] != self.grid.shape or self.modes.shape[0] != self.weights.shape[0]:
            raise ParameterError(
                f"modes {self.modes.shape} do not match {self.weights.shape[0]} weights on grid {self.grid.shape}"
            )

    @property
    def rank(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return self.grid.dim

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        """<f, g>, antilinear in f."""
        return complex(np.vdot(f, g) * self.grid.cell_volume)

    def gram(self) -> np.ndarray:
        flat = self.modes.reshape(self.rank, -1)
        return (flat.conj() @ flat.T) * self.grid.cell_volume

    def norms(self) -> np.ndarray:
        flat = self.modes.reshape(self.rank, -1)
        return np.sqrt(np.sum(np.abs(flat) ** 2, axis=1) * self.grid.cell_volume)

    def with_modes(self, modes: np.ndarray) -> "MixedState":
        return replace(self, modes=modes)

    def with_weights(self, weights: np.ndarray) -> "MixedState":
        return replace(self, weights=np.asarray(weights, dtype=float))

    def validate(self) -> "MixedState":
        if np.any(self.weights < -settings.TRACE_TOLERANCE):
            raise StateValidationError(f"negative weight {self.weights.min()!r} in {self.label or 'state'}")
        total = float(np.sum(self.weights))
        if abs(total - 1.0) > settings.TRACE_TOLERANCE:
            raise StateValidationError(f"weights sum to {total!r}, expected 1")
        gram_error = float(np.max(np.abs(self.gram() - np.eye(self.rank)))) if self.rank else 0.0
        if gram_error > settings.ORTHONORMALITY_TOLERANCE:
            raise StateValidationError(f"eigenfunctions are not orthonormal: Gram error {gram_error:.3e}")
        if self.truncated_weight > settings.TRUNCATION_TOLERANCE:
            raise StateValidationError(f"truncated weight {self.truncated_weight:.3e} exceeds tolerance")
        return self

    def describe(self) -> dict:
        return {
            "label": self.label,
            "eps": self.eps,
            "rank": self.rank,
            "grid": self.grid.describe(),
            "weights": [float(w) for w in self.weights],
            "truncated_weight": self.truncated_weight,
        }

    @classmethod
    def pure(cls, grid: SpaceGrid, eps: float, psi: np.ndarray, label: str = "pure") -> "MixedState":
        norm = np.sqrt(np.sum(np.abs(psi) ** 2) * grid.cell_volume)
        return cls(grid, eps, np.ones(1), (psi / norm)[None], label=label)

    @classmethod
    def from_vectors(cls, grid: SpaceGrid, eps: float, vectors: np.ndarray, weights: Optional[np.ndarray] = None,
                     label: str = "", normalize: bool = False) -> "MixedState":
        """
        Spectral form of sum_r w_r |v_r><v_r| for arbitrary (non-orthogonal)
        vectors, through the SVD of B = [sqrt(w_r) v_r]. Eigenvalues are
        dropped from the small end while their total stays below the
        truncation tolerance.
        """
        count = vectors.shape[0]
        weights = np.ones(count) / count if weights is None else np.asarray(weights, dtype=float)
        if np.any(weights < 0):
            raise StateValidationError("mixture weights must be nonnegative")
        scale = np.sqrt(grid.cell_volume)
        columns = (vectors.reshape(count, -1) * np.sqrt(weights)[:, None]).T * scale
        u, s, _ = scipy.linalg.svd(columns, full_matrices=False, lapack_driver="gesvd")
        eigenvalues = s ** 2
        tail = np.cumsum(eigenvalues[::-1])[::-1]
        keep = int(np.sum(tail > 0.5 * settings.TRUNCATION_TOLERANCE)) or 1
        keep = min(keep, eigenvalues.size)
        dropped = float(eigenvalues[keep:].sum())
        kept = eigenvalues[:keep]
        modes = (u[:, :keep].T / scale).reshape((keep,) + grid.shape)
        raw_trace = float(eigenvalues.sum())
        if normalize:
            kept = kept / kept.sum()
        logging.info(f"spectral form of {count} vectors: rank {keep}, raw trace {raw_trace:.12f}, dropped {dropped:.2e}")
        return cls(grid, eps, kept, modes, truncated_weight=dropped, label=label)


def coherent_state(grid: SpaceGrid, x0: Sequence[float], p0: Sequence[float], eps: float) -> np.ndarray:
    """(pi eps)^(-n/4) exp(-|y - x0|^2 / (2 eps)) exp(i p0.y / eps)"""
    if not eps > 0:
        raise ParameterError(f"semiclassical parameter must be positive, got {eps}")
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (grid.dim,))
    p0 = np.broadcast_to(np.asarray(p0, dtype=float), (grid.dim,))
    mesh = grid.mesh()
    r2 = sum((m - c) ** 2 for m, c in zip(mesh, x0))
    phase = sum(m * q for m, q in zip(mesh, p0))
    return (np.pi * eps) ** (-grid.dim / 4) * np.exp(-r2 / (2 * eps) + 1j * phase / eps)


def coherent_family(grid: SpaceGrid, centers: np.ndarray, eps: float) -> np.ndarray:
    """Coherent states for centers of shape (R, 2n) given as (x, p); shape (R, *grid.shape)."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2 * grid.dim)
    n = grid.dim
    # separable: build one factor per axis and multiply
    family = np.ones((centers.shape[0],) + grid.shape, dtype=complex)
    for axis in range(n):
        x0 = centers[:, axis][:, None]
        p0 = centers[:, n + axis][:, None]
        factor = (np.pi * eps) ** (-0.25) * np.exp(-(grid.axis[None] - x0) ** 2 / (2 * eps) + 1j * p0 * grid.axis[None] / eps)
        shape = [centers.shape[0]] + [1] * n
        shape[1 + axis] = grid.points
        family = family * factor.reshape(shape)
    return family


def trace(state: MixedState) -> float:
    """Weight sum, cross-checked against the quadrature of the kernel diagonal."""
    total = float(np.sum(state.weights))
    diagonal = float(np.sum(kernel_diagonal(state)) * state.grid.cell_volume)
    if abs(total - diagonal) > settings.KERNEL_TRACE_TOLERANCE:
        raise ResolutionError(f"weight sum {total!r} and kernel-diagonal quadrature {diagonal!r} disagree")
    return total


def kernel_diagonal(state: MixedState) -> np.ndarray:
    """rho(x, x) = sum_j mu_j |phi_j(x)|^2"""
    return np.tensordot(state.weights, np.abs(state.modes) ** 2, axes=1)


def overlaps(state: MixedState, probes: np.ndarray) -> np.ndarray:
    """<probe_r, phi_j> for probes of shape (R, *grid.shape); result (R, J)."""
    flat_probes = probes.reshape(probes.shape[0], -1)
    flat_modes = state.modes.reshape(state.rank, -1)
    return (flat_probes.conj() @ flat_modes.T) * state.grid.cell_volume


def coherent_matrix_element(state: MixedState, x, p) -> float:
    """(2 pi eps)^(-n) sum_j mu_j |<phi_{x,p}, phi_j>|^2, the Husimi value at (x, p)."""
    probe = coherent_state(state.grid, x, p, state.eps)
    values = overlaps(state, probe[None])[0]
    return float(np.sum(state.weights * np.abs(values) ** 2) / (2 * np.pi * state.eps) ** state.dim)


def quadratic_form(state: MixedState, vectors: np.ndarray) -> np.ndarray:
    """<v, rho v> for each vector."""
    return np.sum(state.weights[None] * np.abs(overlaps(state, vectors)) ** 2, axis=1)


def laplacian(modes: np.ndarray, grid: SpaceGrid) -> np.ndarray:
    hat = forward_transform(modes, grid, leading=modes.ndim - grid.dim)
    return inverse_transform(-grid.squared_wavenumber() * hat, grid, leading=modes.ndim - grid.dim)


def kinetic_terms(state: MixedState) -> np.ndarray:
    """||eps grad phi_j||^2 per mode, diagonal in Fourier space."""
    hat = forward_transform(state.modes, state.grid, leading=1)
    k2 = state.grid.squared_wavenumber()
    return state.eps ** 2 * np.sum(k2 * np.abs(hat) ** 2, axis=tuple(range(1, hat.ndim))) * state.grid.cell_volume


def apply_hamiltonian(state: MixedState, potential_values: np.ndarray) -> np.ndarray:
    """H phi_j = -eps^2/2 Lap phi_j + U phi_j for every mode."""
    return -0.5 * state.eps ** 2 * laplacian(state.modes, state.grid) + potential_values * state.modes


def observable_expectation(state: MixedState, observable: Observable,
                           potential: Optional[PotentialSpec] = None,
                           potential_values: Optional[np.ndarray] = None) -> float:
    if observable == "kinetic":
        return float(0.5 * np.sum(state.weights * kinetic_terms(state)))
    if potential_values is None:
        if potential is None:
            raise ParameterError(f"observable '{observable}' needs a potential")
        potential_values = potential_on_grid(potential, state.grid)
    if observable == "potential":
        return float(np.sum(potential_values * kernel_diagonal(state)) * state.grid.cell_volume)
    if observable == "H":
        return observable_expectation(state, "kinetic") + observable_expectation(
            state, "potential", potential_values=potential_values)
    if observable == "H_squared_vector":
        h_modes = apply_hamiltonian(state, potential_values)
        norms = np.sum(np.abs(h_modes) ** 2, axis=tuple(range(1, h_modes.ndim))) * state.grid.cell_volume
        return float(np.sum(state.weights * norms))
    raise ParameterError(f"unknown observable '{observable}'")


def singular_square_expectation(state: MixedState, potential: PotentialSpec) -> float:
    """int U_s^2 rho(x, x) dx"""
    if not potential.has_singular:
        return 0.0
    us = singular_on_grid(potential, state.grid)
    return float(np.sum(us ** 2 * kernel_diagonal(state)) * state.grid.cell_volume)


def momentum_density(state: MixedState) -> np.ndarray:
    """
    (2 pi eps)^(-n) sum_j mu_j |phi_hat_j(p/eps)|^2 on p = eps k for the grid
    wavenumbers (FFT order).
    """
    hat = forward_transform(state.modes, state.grid, leading=1)
    # |continuous FT|^2 = dx^n N^n |ortho DFT|^2
    scale = (state.grid.spacing ** 2 * state.grid.points) ** state.dim
    density = np.tensordot(state.weights, np.abs(hat) ** 2, axes=1) * scale
    return density / (2 * np.pi * state.eps) ** state.dim


def spectral_norm(state: MixedState) -> float:
    """Largest eigenvalue of the Gram representation sqrt(mu_i) <phi_i, phi_j> sqrt(mu_j)."""
    root = np.sqrt(np.clip(state.weights, 0.0, None))
    gram = root[:, None] * state.gram() * root[None, :]
    return float(scipy.linalg.eigvalsh(gram)[-1])


def disop_constant(state: MixedState) -> float:
    """C with rho / eps^n <= C Id."""
    return spectral_norm(state) / state.eps ** state.dim


def certify_operator_bound(state: MixedState, samples: int = 100, seed: Optional[int] = None,
                           probe_lattice: Optional[np.ndarray] = None,
                           constant: Optional[float] = None) -> Report:
    """
    Certify rho / eps^n <= C Id: exact C from the Gram spectrum, then random
    unit vectors and coherent probes must stay below C eps^n.
    """
    rng = np.random.default_rng(settings.DEFAULT_SEED if seed is None else seed)
    report = Report(name="operator_bound")
    c = disop_constant(state) if constant is None else constant
    ceiling = c * state.eps ** state.dim + 1e-10
    report.constants["C"] = c
    report.constants["spectral_norm"] = spectral_norm(state)

    shape = (samples,) + state.grid.shape
    vectors = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    norms = np.sqrt(np.sum(np.abs(vectors.reshape(samples, -1)) ** 2, axis=1) * state.grid.cell_volume)
    vectors = vectors / norms.reshape((samples,) + (1,) * state.dim)
    random_max = float(np.max(quadratic_form(state, vectors)))
    report.add("random_quadratic_form", random_max, bound=ceiling)

    if probe_lattice is None:
        halfwidth = 0.75 * state.grid.halfwidth
        axis = np.linspace(-halfwidth, halfwidth, 9)
        probe_lattice = np.array(list(itertools.product(*([axis] * (2 * state.dim)))))
    probes = coherent_family(state.grid, probe_lattice, state.eps)
    coherent_max = float(np.max(quadratic_form(state, probes)))
    report.add("coherent_quadratic_form", coherent_max, bound=ceiling)
    report.constants["husimi_sup_probe"] = coherent_max / (2 * np.pi * state.eps) ** state.dim
    return report


def band_limited_probes(grid: SpaceGrid, count: int, seed: Optional[int] = None,
                        max_wavenumber: float = 4.0, envelope: Optional[float] = None) -> np.ndarray:
    """Random unit vectors with Fourier support |k| <= max_wavenumber under a Gaussian envelope."""
    rng = np.random.default_rng(settings.DEFAULT_SEED if seed is None else seed)
    envelope = envelope or grid.halfwidth / 4
    shape = (count,) + grid.shape
    hat = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    hat = hat * (np.sqrt(grid.squared_wavenumber()) <= max_wavenumber)
    vectors = inverse_transform(hat, grid, leading=1) * np.exp(-grid.squared_radius() / (2 * envelope ** 2))
    norms = np.sqrt(np.sum(np.abs(vectors.reshape(count, -1)) ** 2, axis=1) * grid.cell_volume)
    return vectors / norms.reshape((count,) + (1,) * grid.dim)


def phase_lattice_points(dim: int, x_halfwidth: float, p_halfwidth: float, spacing: float,
                         x_center: Sequence[float] = (), p_center: Sequence[float] = ()) -> np.ndarray:
    """Cell-centred (x, p) lattice with the given spacing, as an array (R, 2n)."""
    def axis(half, center):
        count = max(1, int(np.ceil(2 * half / spacing)))
        return center + (np.arange(count) - (count - 1) / 2.0) * spacing
    x_center = list(x_center) or [0.0] * dim
    p_center = list(p_center) or [0.0] * dim
    axes = [axis(x_halfwidth, c) for c in x_center] + [axis(p_halfwidth, c) for c in p_center]
    return np.array(list(itertools.product(*axes)))


def resolution_of_identity(grid: SpaceGrid, eps: float, probes: np.ndarray, spacing: Optional[float] = None,
                           p_halfwidth: Optional[float] = None) -> Report:
    """
    Apply eps^(-n) sum_cells |psi_{w,q}><psi_{w,q}| dV to each probe and
    compare with (2 pi)^n times the probe.
    """
    spacing = spacing or np.sqrt(eps) / 2
    if p_halfwidth is None:
        hat = forward_transform(probes, grid, leading=1)
        k = np.sqrt(grid.squared_wavenumber())
        occupied = np.max(np.abs(hat), axis=0) > 1e-14 * np.max(np.abs(hat))
        p_halfwidth = eps * float(np.max(k[occupied])) + 8 * np.sqrt(eps)
    centers = phase_lattice_points(grid.dim, grid.halfwidth, p_halfwidth, spacing)
    report = Report(name="resolution_of_identity")
    report.constants.update({"spacing": spacing, "cells": float(len(centers)), "p_halfwidth": p_halfwidth})
    cell = spacing ** (2 * grid.dim)
    result = np.zeros_like(probes, dtype=complex)
    for chunk in np.array_split(centers, max(1, len(centers) // 2048)):
        family = coherent_family(grid, chunk, eps)
        flat = family.reshape(len(chunk), -1)
        coefficients = (flat.conj() @ probes.reshape(len(probes), -1).T) * grid.cell_volume
        result += (coefficients.T @ flat).reshape(probes.shape)
    result *= cell / eps ** grid.dim
    target = (2 * np.pi) ** grid.dim * probes
    axes = tuple(range(1, probes.ndim))
    errors = np.sqrt(np.sum(np.abs(result - target) ** 2, axis=axes) / np.sum(np.abs(target) ** 2, axis=axes))
    for i, err in enumerate(errors):
        report.add(f"probe_{i}", float(err), bound=1e-4)
    report.constants["max_relative_error"] = float(np.max(errors))
    return report
