"""Density matrices, partial traces and non-interacting bipartite evolution."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import BadSubsystem, DimensionMismatch, NumericalFailure
from .hilbert import HybridState

HERMITIAN_TOL = 1e-12
ODE_RTOL = 1e-12
ODE_ATOL = 1e-14
UNITARITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DiscreteDensityMatrix:
    dims: tuple
    matrix: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        m = np.asarray(self.matrix, dtype=complex)
        n = int(np.prod(dims))
        if m.shape != (n, n):
            raise DimensionMismatch(f"matrix shape {m.shape} does not match dims {dims}")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_pure(cls, psi, dims) -> "DiscreteDensityMatrix":
        psi = np.asarray(psi, dtype=complex).ravel()
        return cls(dims, np.outer(psi, psi.conj()))

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def check(self, tol: float = HERMITIAN_TOL) -> None:
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > tol:
            raise NumericalFailure("density matrix is not Hermitian")
        if abs(self.trace() - 1) > tol:
            raise NumericalFailure(f"density matrix trace {self.trace()} != 1")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() < -1e-10:
            raise NumericalFailure("density matrix is not positive semidefinite")


def partial_trace(dm: DiscreteDensityMatrix, keep: Sequence[int]) -> DiscreteDensityMatrix:
    """Trace out every subsystem not listed in ``keep`` (kept order as given)."""
    keep = [int(k) for k in keep]
    n = len(dm.dims)
    if not keep or len(set(keep)) != len(keep) or any(k < 0 or k >= n for k in keep):
        raise BadSubsystem(f"invalid subsystems {keep} for dims {dm.dims}")
    t = dm.matrix.reshape(dm.dims + dm.dims)
    traced = [i for i in range(n) if i not in keep]
    # einsum labels: row indices a.., column indices A..; traced pairs share a label
    row = [chr(97 + i) for i in range(n)]
    col = [chr(97 + i) if i in traced else chr(65 + i) for i in range(n)]
    out = [row[k] for k in keep] + [col[k] for k in keep]
    result = np.einsum("".join(row + col) + "->" + "".join(out), t)
    d = int(np.prod([dm.dims[k] for k in keep]))
    return DiscreteDensityMatrix(tuple(dm.dims[k] for k in keep), result.reshape(d, d))


@dataclass(frozen=True, eq=False)
class FactorizedHamiltonian:
    """``H(t) = f_A(t) H_A (x) 1 + 1 (x) f_B(t) H_B``; profiles default to 1."""

    H_A: np.ndarray
    H_B: np.ndarray
    profile_A: Optional[Callable[[float], float]] = None
    profile_B: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        for name in ("H_A", "H_B"):
            h = np.atleast_2d(np.asarray(getattr(self, name), dtype=complex))
            if h.shape[0] != h.shape[1] or np.max(np.abs(h - h.conj().T)) > HERMITIAN_TOL:
                raise DimensionMismatch(f"{name} must be a square Hermitian matrix")
            object.__setattr__(self, name, h)

    @property
    def dims(self) -> tuple:
        return (self.H_A.shape[0], self.H_B.shape[0])


def time_ordered_exp(h: np.ndarray, t0: float, t1: float, profile=None, hbar: float = 1.0) -> np.ndarray:
    """T exp(-i/hbar int profile(t) H dt), integrated with an adaptive 8th-order solver."""
    h = np.asarray(h, dtype=complex)
    if profile is None:
        return expm(-1j * h * (t1 - t0) / hbar)
    d = h.shape[0]

    def rhs(t, y):
        return (-1j * profile(t) / hbar * (h @ y.reshape(d, d))).ravel()

    sol = solve_ivp(rhs, (t0, t1), np.eye(d, dtype=complex).ravel(), method="DOP853",
                    rtol=ODE_RTOL, atol=ODE_ATOL)
    if not sol.success:
        raise NumericalFailure(f"time-ordered exponential failed: {sol.message}")
    u = sol.y[:, -1].reshape(d, d)
    if np.max(np.abs(u @ u.conj().T - np.eye(d))) > UNITARITY_TOL:
        raise NumericalFailure("time-ordered exponential lost unitarity")
    return u


def evolve_factorized(dm: DiscreteDensityMatrix, ham: FactorizedHamiltonian, t: float,
                      t0: float = 0.0, hbar: float = 1.0) -> DiscreteDensityMatrix:
    if tuple(dm.dims) != ham.dims:
        raise DimensionMismatch(f"density matrix dims {dm.dims} != Hamiltonian dims {ham.dims}")
    u_a = time_ordered_exp(ham.H_A, t0, t, ham.profile_A, hbar)
    u_b = time_ordered_exp(ham.H_B, t0, t, ham.profile_B, hbar)
    u = np.kron(u_a, u_b)
    return DiscreteDensityMatrix(dm.dims, u @ dm.matrix @ u.conj().T)


def reduced_observable(dm: DiscreteDensityMatrix, O_A) -> np.ndarray:
    """``Tr_B[(O_A (x) 1) rho]`` for a bipartite ``dm``."""
    d_a, d_b = dm.dims
    op = np.kron(np.asarray(O_A, dtype=complex), np.eye(d_b))
    prod = DiscreteDensityMatrix(dm.dims, op @ dm.matrix)
    return partial_trace(prod, [0]).matrix


def appendix_invariance_check(psi0, O_A, H_A, H_B_list, t: float, coupling: float = 0.0,
                              hbar: float = 1.0) -> float:
    """Max pairwise spectral-norm spread of ``Tr_B[O_A rho(t)]`` over ``H_B_list``.

    A nonzero ``coupling`` adds ``coupling * H_A (x) H_B`` and evolves with the
    full (non-factorizing) propagator, as a control that should fail.
    """
    H_A = np.asarray(H_A, dtype=complex)
    d_a = H_A.shape[0]
    results = []
    for H_B in H_B_list:
        H_B = np.asarray(H_B, dtype=complex)
        d_b = H_B.shape[0]
        dims = (d_a, d_b)
        psi0 = np.asarray(psi0, dtype=complex).ravel()
        if psi0.size != d_a * d_b:
            raise DimensionMismatch("psi0 does not match the Hamiltonian dimensions")
        dm = DiscreteDensityMatrix.from_pure(psi0, dims)
        if coupling == 0.0:
            dm_t = evolve_factorized(dm, FactorizedHamiltonian(H_A, H_B), t, hbar=hbar)
        else:
            h = (np.kron(H_A, np.eye(d_b)) + np.kron(np.eye(d_a), H_B)
                 + coupling * np.kron(H_A, H_B))
            u = expm(-1j * h * t / hbar)
            dm_t = DiscreteDensityMatrix(dims, u @ dm.matrix @ u.conj().T)
        results.append(reduced_observable(dm_t, O_A))
    worst = 0.0
    for a, b in itertools.combinations(results, 2):
        worst = max(worst, float(np.linalg.norm(a - b, ord=2)))
    return worst


def random_hermitian(n: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * 0.5 * (a + a.conj().T)


def random_pure_state(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)


def hybrid_density_matrix(state: HybridState) -> DiscreteDensityMatrix:
    """Discretized copy of a hybrid state: subsystems are labels then grid DOF.

    Amplitudes are weighted by sqrt(cell volume) so the trace is the norm^2.
    """
    dims = state.discrete_dims + tuple(g.n_points for g in state.grids)
    vec = state.amplitudes.ravel() * np.sqrt(state.cell_volume)
    return DiscreteDensityMatrix.from_pure(vec, dims)
