"""Hybrid wavefunctions on (discrete labels) x (continuous 1-D grids).

Amplitude tensors are laid out as ``discrete_dims + grid shapes``: the first
``len(discrete_dims)`` axes index static labels (measured-system bases), the
remaining axes index one continuous degree of freedom (DOF) each.  All
quadratures use the midpoint rule with cell volume ``prod(dx)``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import BadSubset, ConfigError, ShapeMismatch, ZeroState

log = logging.getLogger(__name__)

DEFAULT_OVERLAP_EPS = 1e-6
BOUNDARY_MASS_WARN = 1e-6


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid with nodes at ``x0 + i*dx``; node ``i`` owns the cell
    ``[x_i - dx/2, x_i + dx/2)``."""

    n_points: int
    dx: float
    x0: float = 0.0
    periodic: bool = True

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 8:
            raise ConfigError(f"n_points must be an integer >= 8, got {self.n_points}")
        if not self.dx > 0:
            raise ConfigError(f"dx must be positive, got {self.dx}")

    @classmethod
    def centered(cls, n_points: int, dx: float, periodic: bool = True) -> "Grid1D":
        return cls(n_points, dx, -0.5 * n_points * dx, periodic)

    @property
    def length(self) -> float:
        return self.n_points * self.dx

    @property
    def lower(self) -> float:
        return self.x0 - 0.5 * self.dx

    @property
    def upper(self) -> float:
        return self.lower + self.length

    @property
    def is_pow2(self) -> bool:
        return self.n_points & (self.n_points - 1) == 0

    def coords(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.n_points)

    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)

    def wrap(self, x):
        x = np.asarray(x, dtype=float)
        if not self.periodic:
            return np.clip(x, self.x0, self.x0 + (self.n_points - 1) * self.dx)
        return self.lower + np.mod(x - self.lower, self.length)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.lower) & (x < self.upper)


@dataclass(frozen=True, eq=False)
class HybridState:
    discrete_dims: tuple
    grids: tuple
    amplitudes: np.ndarray
    masses: tuple
    hbar: float = 1.0
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "discrete_dims", tuple(int(d) for d in self.discrete_dims))
        object.__setattr__(self, "grids", tuple(self.grids))
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))
        if any(d < 1 for d in self.discrete_dims):
            raise ConfigError("discrete dimensions must be positive")
        if len(self.masses) != len(self.grids):
            raise ConfigError("one mass per continuous DOF is required")
        if any(not m > 0 for m in self.masses) or not self.hbar > 0:
            raise ConfigError("masses and hbar must be positive")
        amps = np.array(self.amplitudes, dtype=complex)
        expected = self.discrete_dims + tuple(g.n_points for g in self.grids)
        if amps.shape != expected:
            raise ShapeMismatch(f"amplitude shape {amps.shape} != expected {expected}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_discrete(self) -> int:
        return len(self.discrete_dims)

    @property
    def n_dofs(self) -> int:
        return len(self.grids)

    @property
    def cell_volume(self) -> float:
        return float(np.prod([g.dx for g in self.grids]))

    def axis(self, dof: int) -> int:
        """Tensor axis of continuous DOF ``dof``."""
        return self.n_discrete + dof

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2) * self.cell_volume))

    def with_amplitudes(self, amplitudes, time=None, discrete_dims=None) -> "HybridState":
        return replace(
            self,
            amplitudes=amplitudes,
            time=self.time if time is None else time,
            discrete_dims=self.discrete_dims if discrete_dims is None else discrete_dims,
        )

    def mesh(self) -> list:
        """Broadcastable coordinate arrays, one per continuous DOF (no discrete axes)."""
        n = self.n_dofs
        out = []
        for d, g in enumerate(self.grids):
            shape = [1] * n
            shape[d] = g.n_points
            out.append(g.coords().reshape(shape))
        return out


@dataclass(frozen=True, eq=False)
class DensityGrid:
    subset: tuple
    values: np.ndarray
    grids: tuple = field(default=())

    @property
    def cell_volume(self) -> float:
        return float(np.prod([g.dx for g in self.grids]))

    def integral(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def cell_masses(self) -> np.ndarray:
        return self.values * self.cell_volume


def _check_subset(state: HybridState, subset) -> tuple:
    subset = tuple(int(s) for s in subset)
    if not subset:
        raise BadSubset("subset must be non-empty")
    if len(set(subset)) != len(subset):
        raise BadSubset(f"repeated DOF indices in {subset}")
    if any(s < 0 or s >= state.n_dofs for s in subset):
        raise BadSubset(f"DOF indices {subset} out of range for {state.n_dofs} DOF")
    return subset


def normalize(state: HybridState) -> HybridState:
    norm = state.norm()
    if not norm >= 1e-300:
        raise ZeroState(f"cannot normalize a state with norm {norm:g}")
    return state.with_amplitudes(state.amplitudes / norm)


def marginal_density(state: HybridState, subset: Sequence[int]) -> DensityGrid:
    """|Psi|^2 summed over labels and integrated over the complement DOF.

    Axes of the result follow the order of ``subset``.
    """
    subset = _check_subset(state, subset)
    rho = np.abs(state.amplitudes) ** 2
    complement = [d for d in range(state.n_dofs) if d not in subset]
    sum_axes = tuple(range(state.n_discrete)) + tuple(state.axis(d) for d in complement)
    weight = float(np.prod([state.grids[d].dx for d in complement]))
    values = rho.sum(axis=sum_axes) * weight
    # remaining axes are the subset DOF in increasing order
    order = sorted(subset)
    values = np.transpose(values, [order.index(s) for s in subset])
    return DensityGrid(subset, values, tuple(state.grids[s] for s in subset))


def packet_overlap(state_a: HybridState, state_b: HybridState) -> float:
    """Integral of |Psi_a * Psi_b| over all labels and coordinates."""
    if state_a.amplitudes.shape != state_b.amplitudes.shape or state_a.grids != state_b.grids:
        raise ShapeMismatch("states live on different grids or discrete dimensions")
    return float(np.sum(np.abs(state_a.amplitudes * state_b.amplitudes)) * state_a.cell_volume)


def boundary_mass(state: HybridState, margin: float = 0.05) -> float:
    """Probability within ``margin`` (fraction of extent) of any grid edge."""
    rho = np.abs(state.amplitudes) ** 2 * state.cell_volume
    rho = rho.sum(axis=tuple(range(state.n_discrete)))
    inner = np.ones(rho.shape, dtype=bool)
    for d, g in enumerate(state.grids):
        k = max(1, int(round(margin * g.n_points)))
        idx = np.arange(g.n_points)
        keep = (idx >= k) & (idx < g.n_points - k)
        shape = [1] * state.n_dofs
        shape[d] = g.n_points
        inner = inner & keep.reshape(shape)
    return float(rho[~inner].sum())


def warn_boundary(state: HybridState, threshold: float = BOUNDARY_MASS_WARN) -> float:
    mass = boundary_mass(state)
    if mass > threshold:
        log.warning("boundary mass %.3g exceeds %.1g at t=%g", mass, threshold, state.time)
    return mass


def gaussian_packet(grid: Grid1D, center: float, width: float, momentum: float = 0.0,
                    hbar: float = 1.0) -> np.ndarray:
    """Normalized packet exp(-(x-c)^2 / (2 w^2) + i p x / hbar).

    The position variance of ``|phi|^2`` is ``width**2 / 2``.
    """
    x = grid.coords()
    if grid.periodic:
        # nearest periodic image of the center so packets may sit anywhere
        x = center + (np.mod(x - center + 0.5 * grid.length, grid.length) - 0.5 * grid.length)
    phi = np.exp(-((x - center) ** 2) / (2 * width**2) + 1j * momentum * x / hbar)
    return phi * (np.pi * width**2) ** -0.25


def state_from_terms(grids: Sequence[Grid1D], masses: Sequence[float], terms: Iterable,
                     discrete_dims: Sequence[int] = (), hbar: float = 1.0,
                     normalized: bool = True) -> HybridState:
    """Superpose product terms ``amplitude * |labels> * prod_d phi_d(x_d)``.

    Each term is ``(amplitude, labels, factors)`` where ``factors`` holds one
    1-D complex array per DOF, or a dict of :func:`gaussian_packet` keywords.
    """
    grids = tuple(grids)
    discrete_dims = tuple(discrete_dims)
    amps = np.zeros(discrete_dims + tuple(g.n_points for g in grids), dtype=complex)
    for amplitude, labels, factors in terms:
        labels = tuple(labels)
        if len(labels) != len(discrete_dims) or len(factors) != len(grids):
            raise ConfigError("term labels/factors do not match the model dimensions")
        arrays = []
        for g, f in zip(grids, factors):
            if isinstance(f, dict):
                f = gaussian_packet(g, hbar=hbar, **f)
            arrays.append(np.asarray(f, dtype=complex))
        product = np.asarray(complex(amplitude))
        for arr in arrays:
            product = np.multiply.outer(product, arr)
        amps[labels] += product
    state = HybridState(discrete_dims, grids, amps, tuple(masses), hbar)
    return normalize(state) if normalized else state


def write_density_csv(path, density: DensityGrid) -> None:
    """One row per grid node: coordinates in subset order, then density."""
    coords = np.meshgrid(*[g.coords() for g in density.grids], indexing="ij")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{d}" for d in density.subset] + ["density"])
        flat = [c.ravel() for c in coords] + [density.values.ravel()]
        for row in zip(*flat):
            writer.writerow([repr(float(v)) for v in row])
