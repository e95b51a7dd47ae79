"""Bohmian and marginalized (partial-trace) velocity fields.

For an owned DOF subset S the marginalized velocity of DOF b is

    v_b(x_S) = sum_labels int d(x_not_S) (hbar/m_b) Im(Psi^* d_b Psi)
               -----------------------------------------------------
               sum_labels int d(x_not_S) |Psi|^2

which reduces to the ordinary guidance law when S holds every DOF.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import BadSubset, ConfigError, NodeRegion
from .hilbert import Grid1D, HybridState, _check_subset

BOHMIAN = "bohmian-full"
MARGINALIZED = "marginalized"
RELATIVE_NODE_FLOOR = 1e-12


@dataclass(frozen=True)
class VelocityFieldSpec:
    owned_dofs: tuple
    law: str = MARGINALIZED
    node_epsilon: Optional[float] = None  # absolute floor; None means 1e-12 * max density
    interpolation: str = "multilinear"  # or "spectral" (trigonometric, periodic grids)
    gradient: str = "spectral"  # or "central2" / "central4"

    def __post_init__(self):
        owned = tuple(int(d) for d in self.owned_dofs)
        object.__setattr__(self, "owned_dofs", owned)
        if not owned or len(set(owned)) != len(owned):
            raise BadSubset(f"owned_dofs must be non-empty without repeats, got {owned}")
        if self.law not in (BOHMIAN, MARGINALIZED):
            raise ConfigError(f"unknown velocity law {self.law!r}")
        if self.interpolation not in ("multilinear", "spectral"):
            raise ConfigError(f"unknown interpolation {self.interpolation!r}")
        if self.gradient not in ("spectral", "central2", "central4"):
            raise ConfigError(f"unknown gradient {self.gradient!r}")
        if self.node_epsilon is not None and self.node_epsilon < 0:
            raise ConfigError("node_epsilon must be >= 0")

    def check(self, state: HybridState) -> None:
        _check_subset(state, self.owned_dofs)
        if self.law == BOHMIAN and sorted(self.owned_dofs) != list(range(state.n_dofs)):
            raise BadSubset("the full Bohmian law needs every continuous DOF owned")


@dataclass(frozen=True)
class VelocitySample:
    point: np.ndarray
    velocity: np.ndarray
    density_at_point: float
    flagged: bool = False


def gradient(psi: np.ndarray, axis: int, grid: Grid1D, method: str = "spectral") -> np.ndarray:
    """Derivative of ``psi`` along ``axis``."""
    dx = grid.dx
    if method == "spectral":
        if not grid.periodic:
            raise ConfigError("spectral gradient needs a periodic grid")
        k = 1j * grid.wavenumbers()
        if grid.n_points % 2 == 0:
            k[grid.n_points // 2] = 0.0
        shape = [1] * psi.ndim
        shape[axis] = grid.n_points
        return sfft.ifft(sfft.fft(psi, axis=axis) * k.reshape(shape), axis=axis)
    if method == "central2":
        if grid.periodic:
            return (np.roll(psi, -1, axis) - np.roll(psi, 1, axis)) / (2 * dx)
        return np.gradient(psi, dx, axis=axis, edge_order=2)
    if method == "central4":
        if grid.periodic:
            r = lambda s: np.roll(psi, s, axis)  # noqa: E731
            return (-r(-2) + 8 * r(-1) - 8 * r(1) + r(2)) / (12 * dx)
        out = np.gradient(psi, dx, axis=axis, edge_order=2)
        core = [slice(None)] * psi.ndim

        def sl(a, b):
            s = list(core)
            s[axis] = slice(a, psi.shape[axis] + b if b else None)
            return tuple(s)

        out[sl(2, -2)] = (-psi[sl(4, 0)] + 8 * psi[sl(3, -1)] - 8 * psi[sl(1, -3)]
                          + psi[sl(0, -4)]) / (12 * dx)
        return out
    raise ConfigError(f"unknown gradient method {method!r}")


def _sum_out(state: HybridState, arr: np.ndarray, owned: Sequence[int]) -> np.ndarray:
    """Trace labels and integrate complement DOF; result axes in ``owned`` order."""
    complement = [d for d in range(state.n_dofs) if d not in owned]
    axes = tuple(range(state.n_discrete)) + tuple(state.axis(d) for d in complement)
    weight = float(np.prod([state.grids[d].dx for d in complement]))
    out = arr.sum(axis=axes) * weight
    order = sorted(owned)
    return np.transpose(out, [order.index(s) for s in owned])


def current_density(state: HybridState, dof: int, method: str = "spectral") -> np.ndarray:
    """Per-node ``(hbar/m) Im(Psi^* d Psi)`` over the full amplitude tensor."""
    dpsi = gradient(state.amplitudes, state.axis(dof), state.grids[dof], method)
    return state.hbar / state.masses[dof] * np.imag(np.conj(state.amplitudes) * dpsi)


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Velocity of the owned DOF rasterized on their grid nodes."""

    owned_dofs: tuple
    grids: tuple
    density: np.ndarray
    current: np.ndarray  # shape (len(owned), *grid)
    floor: float
    time: float = 0.0

    @property
    def flagged(self) -> np.ndarray:
        return self.density < self.floor

    @property
    def velocity(self) -> np.ndarray:
        return self.current / np.maximum(self.density, self.floor)

    def sample(self, points) -> tuple:
        """Multilinear interpolation at ``points`` (shape (n, d)).

        Returns ``(velocity (n, d), density (n,), flagged (n,))``.  Points are
        wrapped on periodic grids and clamped otherwise.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n, d = pts.shape
        if d != len(self.owned_dofs):
            raise BadSubset(f"points have {d} coordinates, field has {len(self.owned_dofs)}")
        lo_idx, frac = [], []
        for j, g in enumerate(self.grids):
            s = (g.wrap(pts[:, j]) - g.x0) / g.dx
            if g.periodic:
                i0 = np.floor(s).astype(int)
                f = s - i0
                i0 = np.mod(i0, g.n_points)
            else:
                i0 = np.clip(np.floor(s).astype(int), 0, g.n_points - 2)
                f = np.clip(s - i0, 0.0, 1.0)
            lo_idx.append(i0)
            frac.append(f)
        vel = np.zeros((n, d))
        rho = np.zeros(n)
        fields = self.velocity
        for corner in np.ndindex(*(2,) * d):
            w = np.ones(n)
            idx = []
            for j, c in enumerate(corner):
                g = self.grids[j]
                i = lo_idx[j] + c
                idx.append(np.mod(i, g.n_points) if g.periodic else i)
                w = w * (frac[j] if c else 1.0 - frac[j])
            idx = tuple(idx)
            rho += w * self.density[idx]
            for j in range(d):
                vel[:, j] += w * fields[j][idx]
        return vel, rho, rho < self.floor


def _floor(spec: VelocityFieldSpec, max_density: float) -> float:
    if spec.node_epsilon is not None:
        return float(spec.node_epsilon)
    return RELATIVE_NODE_FLOOR * max_density


def velocity_field(state: HybridState, spec: VelocityFieldSpec) -> VelocityField:
    spec.check(state)
    owned = spec.owned_dofs
    density = _sum_out(state, np.abs(state.amplitudes) ** 2, owned)
    current = np.stack([_sum_out(state, current_density(state, b, spec.gradient), owned)
                        for b in owned])
    return VelocityField(owned, tuple(state.grids[d] for d in owned), density, current,
                         _floor(spec, float(density.max())), state.time)


def _trig_weights(grid: Grid1D, x: float) -> tuple:
    """Weights ``w, dw`` with ``f(x) = sum_j w_j f_j`` and ``f'(x) = sum_j dw_j f_j``
    for the band-limited interpolant through periodic samples ``f_j``."""
    n = grid.n_points
    k = grid.wavenumbers()
    xj = grid.coords()
    phase = np.exp(1j * np.multiply.outer(k, x - xj))  # (k, j)
    w = phase.copy()
    dw = 1j * k[:, None] * phase
    if n % 2 == 0:
        # split the Nyquist mode symmetrically: cos instead of a one-sided exponential
        kn = k[n // 2]
        w[n // 2] = np.cos(kn * (x - xj))
        dw[n // 2] = -kn * np.sin(kn * (x - xj))
    return w.sum(axis=0) / n, dw.sum(axis=0) / n


def _spectral_point(state: HybridState, spec: VelocityFieldSpec, point) -> tuple:
    owned = spec.owned_dofs
    if any(not state.grids[d].periodic for d in owned):
        raise ConfigError("spectral interpolation needs periodic grids")
    weights = {d: _trig_weights(state.grids[d], float(x)) for d, x in zip(owned, point)}
    # contract owned axes from the highest tensor axis down so indices stay valid
    order = sorted(owned, reverse=True)

    def contract(arr, deriv_dof):
        for d in order:
            w, dw = weights[d]
            arr = np.tensordot(arr, dw if d == deriv_dof else w, axes=([state.axis(d)], [0]))
        return arr

    psi = state.amplitudes
    value = contract(psi, None)
    vol_c = float(np.prod([g.dx for i, g in enumerate(state.grids) if i not in owned]))
    density = float(np.sum(np.abs(value) ** 2) * vol_c)
    current = np.array([
        state.hbar / state.masses[b] * float(np.sum(np.imag(np.conj(value) * contract(psi, b)))) * vol_c
        for b in owned
    ])
    return current, density


def _point_sample(state: HybridState, spec: VelocityFieldSpec, point, raise_on_node: bool = True,
                  field: Optional[VelocityField] = None) -> VelocitySample:
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if point.shape != (len(spec.owned_dofs),):
        raise BadSubset(f"point must have {len(spec.owned_dofs)} coordinates")
    for d, x in zip(spec.owned_dofs, point):
        g = state.grids[d]
        if not g.periodic and not (g.x0 <= x <= g.x0 + (g.n_points - 1) * g.dx):
            raise BadSubset(f"coordinate {x} outside the grid of DOF {d}")
    if spec.interpolation == "spectral":
        spec.check(state)
        current, density = _spectral_point(state, spec, point)
        scale = 0.0
        if spec.node_epsilon is None:
            scale = float(_sum_out(state, np.abs(state.amplitudes) ** 2, spec.owned_dofs).max())
        floor = _floor(spec, scale)
        flagged = density < floor
        vel = current / max(density, floor)
    else:
        field = field or velocity_field(state, spec)
        v, rho, fl = field.sample(point[None, :])
        vel, density, flagged = v[0], float(rho[0]), bool(fl[0])
        floor = field.floor
    if flagged and raise_on_node:
        raise NodeRegion(f"density {density:.3g} below node floor {floor:.3g} at {point}", density)
    return VelocitySample(point, np.asarray(vel, dtype=float), density, bool(flagged))


def bohmian_velocity(state: HybridState, point, spec: Optional[VelocityFieldSpec] = None) -> VelocitySample:
    """Guidance velocity of every DOF at a full configuration ``point``."""
    spec = spec or VelocityFieldSpec(tuple(range(state.n_dofs)), BOHMIAN)
    if spec.law != BOHMIAN:
        raise ConfigError("bohmian_velocity requires the bohmian-full law")
    return _point_sample(state, spec, point)


def marginal_velocity(state: HybridState, spec: VelocityFieldSpec, point) -> VelocitySample:
    """Velocity of the owned DOF with labels and complement DOF traced out."""
    if spec.law != MARGINALIZED:
        raise ConfigError("marginal_velocity requires the marginalized law")
    return _point_sample(state, spec, point)


def no_signaling_velocity_check(state_pairs, spec: VelocityFieldSpec, probe_points) -> float:
    """Largest change of the owned-DOF velocity across each pair of states."""
    worst = 0.0
    for before, after in state_pairs:
        fa = fb = None
        if spec.interpolation == "multilinear":
            fa, fb = velocity_field(before, spec), velocity_field(after, spec)
        for p in probe_points:
            va = _point_sample(before, spec, p, raise_on_node=False, field=fa)
            vb = _point_sample(after, spec, p, raise_on_node=False, field=fb)
            worst = max(worst, float(np.max(np.abs(va.velocity - vb.velocity))))
    return worst


def write_velocity_raster(path, field: VelocityField) -> None:
    """Columns: owned coordinates, density, one velocity per owned DOF, node flag."""
    coords = np.meshgrid(*[g.coords() for g in field.grids], indexing="ij")
    vel = field.velocity
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{d}" for d in field.owned_dofs] + ["density"]
                        + [f"v{d}" for d in field.owned_dofs] + ["node_flag"])
        cols = [c.ravel() for c in coords] + [field.density.ravel()] + [v.ravel() for v in vel]
        flags = field.flagged.ravel()
        for i in range(flags.size):
            writer.writerow([repr(float(c[i])) for c in cols] + [int(flags[i])])
