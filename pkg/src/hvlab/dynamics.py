"""Split-step spectral propagation and von Neumann pointer coupling."""

from __future__ import annotations

import itertools
import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import ConfigError, IndistinguishableBranches, UnstableStep
from .hilbert import DEFAULT_OVERLAP_EPS, Grid1D, HybridState, gaussian_packet, marginal_density

log = logging.getLogger(__name__)

NORM_STEP_TOL = 1e-6


@dataclass(frozen=True)
class Potential:
    """Real scalar potential ``evaluator(labels, coords, t)``.

    ``coords`` are the broadcastable per-DOF coordinate arrays of
    :meth:`HybridState.mesh`.  The evaluator must return something that
    broadcasts to the grid shape.
    """

    evaluator: Callable
    descriptor: dict = field(default_factory=lambda: {"kind": "custom"})
    label_dependent: bool = False
    time_dependent: bool = False

    def grid_values(self, state: HybridState, t: float) -> np.ndarray:
        """Potential on the full amplitude tensor shape (labels x grids)."""
        coords = state.mesh()
        grid_shape = tuple(g.n_points for g in state.grids)
        if not self.label_dependent:
            v = np.broadcast_to(np.asarray(self.evaluator(None, coords, t), dtype=float), grid_shape)
            return v.reshape((1,) * state.n_discrete + grid_shape)
        out = np.empty(state.discrete_dims + grid_shape)
        for labels in itertools.product(*[range(d) for d in state.discrete_dims]):
            out[labels] = np.broadcast_to(np.asarray(self.evaluator(labels, coords, t), dtype=float),
                                          grid_shape)
        return out

    def __add__(self, other: "Potential") -> "Potential":
        def evaluator(labels, coords, t):
            a = self.evaluator(labels if self.label_dependent else None, coords, t)
            b = other.evaluator(labels if other.label_dependent else None, coords, t)
            return np.add(a, b)

        return Potential(
            evaluator,
            {"kind": "sum", "terms": [self.descriptor, other.descriptor]},
            self.label_dependent or other.label_dependent,
            self.time_dependent or other.time_dependent,
        )


def zero_potential() -> Potential:
    return Potential(lambda labels, coords, t: 0.0, {"kind": "zero"})


def harmonic_potential(omega: Sequence[float], masses: Sequence[float],
                       center: Optional[Sequence[float]] = None) -> Potential:
    """``sum_d m_d omega_d^2 (x_d - c_d)^2 / 2``; a zero omega leaves that DOF free."""
    omega = [float(w) for w in omega]
    center = [0.0] * len(omega) if center is None else [float(c) for c in center]

    def evaluator(labels, coords, t):
        return sum(0.5 * m * w**2 * (x - c) ** 2 for x, w, m, c in zip(coords, omega, masses, center))

    return Potential(evaluator, {"kind": "harmonic", "omega": omega, "center": center})


def barrier_potential(dof: int, height: float, lo: float, hi: float) -> Potential:
    def evaluator(labels, coords, t):
        x = coords[dof]
        return np.where((x >= lo) & (x < hi), height, 0.0)

    return Potential(evaluator, {"kind": "barrier", "dof": dof, "height": height, "lo": lo, "hi": hi})


def coupling_kick_potential(pointer_dof: int, factor: int, eigenvalues: Sequence[float],
                            coupling: float, t_on: float, t_off: float) -> Potential:
    """Label-conditional kick ``-g k x_pointer`` switched on for ``t_on <= t < t_off``.

    Imparts pointer momentum ``g k (t_off - t_on)`` on label ``k``; being a
    scalar potential, trajectory laws stay valid throughout.
    """
    eigenvalues = [float(k) for k in eigenvalues]

    def evaluator(labels, coords, t):
        if not t_on <= t < t_off:
            return 0.0
        return -coupling * eigenvalues[labels[factor]] * coords[pointer_dof]

    return Potential(
        evaluator,
        {"kind": "measurement-coupling", "pointer_dof": pointer_dof, "factor": factor,
         "eigenvalues": eigenvalues, "coupling": coupling, "t_on": t_on, "t_off": t_off},
        label_dependent=True,
        time_dependent=True,
    )


def _kinetic_phase(state: HybridState, dt: float, dofs) -> np.ndarray:
    n = state.n_dofs
    total = np.zeros((1,) * n)
    for d in dofs:
        g = state.grids[d]
        k = g.wavenumbers()
        shape = [1] * n
        shape[d] = g.n_points
        total = total + (state.hbar * k**2 / (2 * state.masses[d])).reshape(shape)
    return np.exp(-1j * total * dt).reshape((1,) * state.n_discrete + total.shape)


def evolve(state: HybridState, potential: Optional[Potential], dt: float, steps: int,
           dofs: Optional[Sequence[int]] = None, workers: Optional[int] = None) -> HybridState:
    """Strang splitting: half potential, spectral kinetic, half potential.

    ``dofs`` restricts the kinetic term to those DOF; the caller is then
    responsible for passing a potential that acts on them only.
    """
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    steps = int(steps)
    if steps < 0:
        raise ConfigError("steps must be non-negative")
    dofs = tuple(range(state.n_dofs)) if dofs is None else tuple(dofs)
    if any(not state.grids[d].periodic for d in dofs):
        raise ConfigError("the spectral propagator needs periodic grids")
    if dofs:
        dx_min = min(state.grids[d].dx for d in dofs)
        m_min = min(state.masses[d] for d in dofs)
        limit = dx_min**2 * m_min / (state.hbar * np.pi)
        if dt > limit:
            log.info("dt=%g exceeds the dx^2 m/(hbar pi)=%g guideline", dt, limit)
    potential = zero_potential() if potential is None else potential
    static = not potential.time_dependent
    axes = tuple(state.axis(d) for d in dofs)
    kin = _kinetic_phase(state, dt, dofs)
    if static:
        half = np.exp(-0.5j * potential.grid_values(state, state.time) * dt / state.hbar)

    psi = np.array(state.amplitudes)
    dv = state.cell_volume
    norm0 = float(np.sum(np.abs(psi) ** 2) * dv)
    prev = norm0
    t = state.time
    for _ in range(steps):
        if not static:
            half = np.exp(-0.5j * potential.grid_values(state, t + 0.5 * dt) * dt / state.hbar)
        psi = psi * half
        if axes:
            psi = sfft.ifftn(sfft.fftn(psi, axes=axes, workers=workers) * kin, axes=axes,
                             workers=workers)
        psi = psi * half
        t += dt
        cur = float(np.sum(np.abs(psi) ** 2) * dv)
        if not abs(cur - prev) <= NORM_STEP_TOL:
            raise UnstableStep(f"norm drifted from {prev:.12g} to {cur:.12g} at t={t:g}")
        prev = cur
    return state.with_amplitudes(psi, time=t)


@dataclass(frozen=True)
class MeasurementModel:
    """Von Neumann pointer coupling ``g K (x) p_pointer`` applied impulsively.

    Label ``i`` of discrete factor ``factor`` (eigenvalue ``eigenvalues[i]``)
    translates the pointer by ``coupling * eigenvalues[i] * duration``.
    """

    pointer_dof: int
    eigenvalues: tuple
    coupling: float
    duration: float
    factor: int = 0
    pointer_init: Optional[dict] = None
    destroy: bool = False
    overlap_eps: float = DEFAULT_OVERLAP_EPS

    def shift(self, index: int) -> float:
        return self.coupling * self.eigenvalues[index] * self.duration

    def pointer_centers(self) -> list:
        c0 = (self.pointer_init or {}).get("center", 0.0)
        return [c0 + self.shift(i) for i in range(len(self.eigenvalues))]

    def initial_pointer(self, grid: Grid1D, hbar: float = 1.0) -> np.ndarray:
        if self.pointer_init is None:
            raise ConfigError("MeasurementModel.pointer_init is required to build the pointer packet")
        return gaussian_packet(grid, hbar=hbar, **self.pointer_init)


def translate(psi: np.ndarray, axis: int, grid: Grid1D, shift: float) -> np.ndarray:
    """psi(x - shift) along ``axis`` by Fourier phase; exactly unitary on the grid."""
    k = grid.wavenumbers()
    shape = [1] * psi.ndim
    shape[axis] = grid.n_points
    phase = np.exp(-1j * k * shift).reshape(shape)
    return sfft.ifft(sfft.fft(psi, axis=axis) * phase, axis=axis)


def branch_slice(state: HybridState, factor: int, index: int) -> HybridState:
    """State with every label of ``factor`` except ``index`` zeroed out."""
    mask = np.zeros(state.discrete_dims[factor])
    mask[index] = 1.0
    shape = [1] * state.amplitudes.ndim
    shape[factor] = state.discrete_dims[factor]
    return state.with_amplitudes(state.amplitudes * mask.reshape(shape))


def apply_measurement(state: HybridState, model: MeasurementModel) -> HybridState:
    if not 0 <= model.factor < state.n_discrete:
        raise ConfigError(f"measured factor {model.factor} does not exist")
    if state.discrete_dims[model.factor] != len(model.eigenvalues):
        raise ConfigError("discrete factor size must equal the number of eigenvalues")
    if not 0 <= model.pointer_dof < state.n_dofs:
        raise ConfigError(f"pointer DOF {model.pointer_dof} does not exist")
    grid = state.grids[model.pointer_dof]
    axis = state.axis(model.pointer_dof)
    psi = np.array(state.amplitudes)
    for i in range(len(model.eigenvalues)):
        index = [slice(None)] * psi.ndim
        index[model.factor] = i
        psi[tuple(index)] = translate(psi[tuple(index)], axis - 1, grid, model.shift(i))
    out = state.with_amplitudes(psi)

    # branches live in different label sectors, so compare their pointer
    # marginals: int sqrt(rho_i rho_j) dx, which is |<phi_i|phi_j>| for pure packets
    branches = []
    for i in range(len(model.eigenvalues)):
        b = branch_slice(out, model.factor, i)
        n = b.norm()
        if n > 1e-12:
            branches.append((i, marginal_density(b, [model.pointer_dof]).values / n))
    for (i, a), (j, b) in itertools.combinations(branches, 2):
        ov = float(np.sum(np.sqrt(a * b)) * grid.dx)
        if ov >= model.overlap_eps:
            raise IndistinguishableBranches(
                f"pointer packets for labels {i} and {j} overlap by {ov:.3g} >= {model.overlap_eps:g}")

    if model.destroy:
        collapsed = np.zeros_like(psi)
        index = [slice(None)] * psi.ndim
        index[model.factor] = 0
        collapsed[tuple(index)] = psi.sum(axis=model.factor)
        out = out.with_amplitudes(collapsed)
    return out


# Snapshot layout: b"HVSNAP01", uint32 LE header length, UTF-8 JSON header,
# then the amplitude tensor in C order as little-endian complex64/complex128.
_MAGIC = b"HVSNAP01"


def save_snapshot(path, state: HybridState, dtype: str = "complex128") -> None:
    if dtype not in ("complex64", "complex128"):
        raise ConfigError("snapshot dtype must be complex64 or complex128")
    header = {
        "shape": list(state.amplitudes.shape),
        "dtype": "<c8" if dtype == "complex64" else "<c16",
        "discrete_dims": list(state.discrete_dims),
        "grids": [[g.n_points, g.dx, g.x0, g.periodic] for g in state.grids],
        "masses": list(state.masses),
        "hbar": state.hbar,
        "time": state.time,
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(np.ascontiguousarray(state.amplitudes, dtype=header["dtype"]).tobytes())


def load_snapshot(path) -> HybridState:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ConfigError(f"{path} is not an hvlab snapshot")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length))
        payload = np.frombuffer(fh.read(), dtype=header["dtype"])
    amps = payload.reshape(header["shape"]).astype(complex)
    grids = tuple(Grid1D(int(n), dx, x0, bool(p)) for n, dx, x0, p in header["grids"])
    return HybridState(tuple(header["discrete_dims"]), grids, amps, tuple(header["masses"]),
                       header["hbar"], header["time"])
