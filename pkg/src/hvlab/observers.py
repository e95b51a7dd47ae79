"""Two-observer trajectory laws: joint (nonlocal) and per-observer (local)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dynamics import MeasurementModel, apply_measurement
from .errors import BadSubset, ConfigError
from .hilbert import Grid1D, HybridState, gaussian_packet
from .measurement import BranchSpec, born_probabilities, branch_frequencies, classify_ensemble
from .rng import STREAM_OBSERVER_A, STREAM_OBSERVER_B, STREAM_SAMPLE
from .trajectories import integrate, sample_initial
from .velocity import MARGINALIZED, VelocityFieldSpec, marginal_velocity

ANTICORRELATED = "anticorrelated"
SHARED = "shared-superposition"
UP, DOWN = "up", "down"


@dataclass(frozen=True)
class ObserverPartition:
    """Continuous DOF index -> "A", "B" or "environment"."""

    assignments: dict

    def __post_init__(self):
        bad = {v for v in self.assignments.values()} - {"A", "B", "environment"}
        if bad:
            raise ConfigError(f"unknown observer tags {sorted(bad)}")
        if not self.A or not self.B:
            raise BadSubset("both observers need at least one DOF")

    @classmethod
    def from_lists(cls, A, B, environment=()) -> "ObserverPartition":
        a = {int(d): "A" for d in A}
        a.update({int(d): "B" for d in B})
        a.update({int(d): "environment" for d in environment})
        if len(a) != len(A) + len(B) + len(environment):
            raise BadSubset("observer DOF sets must be disjoint")
        return cls(a)

    def dofs(self, tag: str) -> tuple:
        return tuple(sorted(d for d, v in self.assignments.items() if v == tag))

    @property
    def A(self) -> tuple:
        return self.dofs("A")

    @property
    def B(self) -> tuple:
        return self.dofs("B")

    @property
    def n_A(self) -> int:
        return len(self.A)

    @property
    def n_B(self) -> int:
        return len(self.B)


@dataclass(frozen=True)
class EPRGeometry:
    """Pointer grids and packet layout shared by both observers."""

    n_points: int = 128
    dx: float = 0.25
    width: float = 1.0
    separation: float = 12.0
    mass: float = 1.0
    hbar: float = 1.0

    def grid(self) -> Grid1D:
        return Grid1D.centered(self.n_points, self.dx)

    def centers(self) -> dict:
        return {UP: 0.5 * self.separation, DOWN: -0.5 * self.separation}

    def branch_spec(self, dof: int, sigma_cut: float = 5.0) -> BranchSpec:
        c = self.centers()
        return BranchSpec.from_packets([dof], [(UP, [c[UP]]), (DOWN, [c[DOWN]])], self.width, sigma_cut)


def build_epr_state(kind: str, amplitudes, geometry: Optional[EPRGeometry] = None,
                    overlap_eps: Optional[float] = None) -> HybridState:
    """Post-measurement two-observer state, built by coupling each pointer.

    ``anticorrelated``: labels (spin1, spin2), input a0|up,down> + a1|down,up>.
    ``shared-superposition``: one spin label, input a0|up> + a1|down>, both
    observers measuring it.  DOF 0 is Alice's pointer, DOF 1 is Bob's.
    ``overlap_eps`` overrides the branch certification threshold (``inf``
    disables it, for deliberately overlapping witness geometries).
    """
    geometry = geometry or EPRGeometry()
    amps = np.asarray(amplitudes, dtype=complex).ravel()
    if amps.shape != (2,):
        raise ConfigError("EPR amplitudes need exactly two entries")
    if abs(np.sum(np.abs(amps) ** 2) - 1) > 1e-9:
        raise ConfigError("EPR amplitudes must be normalized")
    g = geometry.grid()
    phi0 = gaussian_packet(g, 0.0, geometry.width, hbar=geometry.hbar)
    pointers = np.multiply.outer(phi0, phi0)
    if kind == ANTICORRELATED:
        spin = np.zeros((2, 2), dtype=complex)
        spin[0, 1], spin[1, 0] = amps  # label 0 = up, 1 = down
        factors = (0, 1)
    elif kind == SHARED:
        spin = amps
        factors = (0, 0)
    else:
        raise ConfigError(f"unknown EPR kind {kind!r}")
    psi = np.multiply.outer(spin, pointers)
    state = HybridState(spin.shape, (g, g), psi, (geometry.mass,) * 2, geometry.hbar)
    # eigenvalues +1/-1 move the pointer to +/- separation/2
    for pointer, factor in enumerate(factors):
        model = MeasurementModel(pointer, (1.0, -1.0), 0.5 * geometry.separation, 1.0, factor=factor)
        if overlap_eps is not None:
            model = replace(model, overlap_eps=overlap_eps)
        state = apply_measurement(state, model)
    return state


def joint_velocity(state: HybridState, partition: ObserverPartition, point, **spec_kw):
    """Velocity of A and B DOF (A first) with everything else traced out."""
    spec = VelocityFieldSpec(partition.A + partition.B, MARGINALIZED, **spec_kw)
    return marginal_velocity(state, spec, point)


def local_velocities(state: HybridState, partition: ObserverPartition, point_A, point_B, **spec_kw):
    """Independent per-observer velocities; v_A never sees ``point_B``."""
    return (_observer_velocity(state, partition.A, point_A, spec_kw),
            _observer_velocity(state, partition.B, point_B, spec_kw))


def _observer_velocity(state, dofs, point, spec_kw):
    return marginal_velocity(state, VelocityFieldSpec(dofs, MARGINALIZED, **spec_kw), point)


@dataclass
class ScenarioResult:
    labels: list
    joint_branch_counts: np.ndarray
    unclassified: int
    disagreement_rate: float
    born_tables: dict = field(default_factory=dict)
    law: str = "local"

    @property
    def n_classified(self) -> int:
        return int(self.joint_branch_counts.sum())

    def fraction(self, pairs) -> float:
        """Fraction of classified pairs falling in the given (A label, B label) cells."""
        idx = {l: i for i, l in enumerate(self.labels)}
        total = sum(self.joint_branch_counts[idx[a], idx[b]] for a, b in pairs)
        return float(total) / max(self.n_classified, 1)

    def to_json(self) -> dict:
        return {
            "law": self.law,
            "labels": list(self.labels),
            "joint_branch_counts": self.joint_branch_counts.astype(int).tolist(),
            "unclassified": int(self.unclassified),
            "disagreement_rate": float(self.disagreement_rate),
            "born_tables": {
                obs: [{"k": k, "p_k": p, "fraction": f, "stderr": se} for k, p, f, se in rows]
                for obs, rows in self.born_tables.items()
            },
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _tabulate(idx_a, idx_b, labels):
    both = (idx_a >= 0) & (idx_b >= 0)
    counts = np.zeros((len(labels), len(labels)), dtype=int)
    np.add.at(counts, (idx_a[both], idx_b[both]), 1)
    n = int(both.sum())
    disagree = float(np.count_nonzero(idx_a[both] != idx_b[both])) / n if n else 0.0
    return counts, int((~both).sum()), disagree


def _born_table(state, spec, ensemble):
    analytic = born_probabilities(state, spec)
    empirical = branch_frequencies(ensemble, spec)
    return [(k, p, f, se) for (k, p), (_, f, se) in zip(analytic, empirical)]


def _check_specs(spec_A: BranchSpec, spec_B: BranchSpec):
    if spec_A.labels != spec_B.labels:
        raise ConfigError("both observers must use the same branch labels in the same order")


def run_disagreement_experiment(state: HybridState, partition: ObserverPartition, spec_A: BranchSpec,
                                spec_B: BranchSpec, n_walkers: int, seed: int, provider=None,
                                dt: float = 0.0, steps: int = 0) -> ScenarioResult:
    """Local law: Alice's and Bob's ensembles drawn and moved independently.

    Walker i of Alice is paired with walker i of Bob (same experiment index,
    independent RNG streams).
    """
    _check_specs(spec_A, spec_B)
    law_A = VelocityFieldSpec(partition.A, MARGINALIZED)
    law_B = VelocityFieldSpec(partition.B, MARGINALIZED)
    ens_A = sample_initial(state, law_A, n_walkers, seed, stream=STREAM_OBSERVER_A)
    ens_B = sample_initial(state, law_B, n_walkers, seed, stream=STREAM_OBSERVER_B)
    final = state
    if steps:
        ens_A = integrate(ens_A, provider, law_A, dt, steps)
        ens_B = integrate(ens_B, provider, law_B, dt, steps)
        final = provider.state_at(ens_A.time)
    counts, unclassified, disagree = _tabulate(classify_ensemble(ens_A, spec_A),
                                               classify_ensemble(ens_B, spec_B), spec_A.labels)
    tables = {"A": _born_table(final, spec_A, ens_A), "B": _born_table(final, spec_B, ens_B)}
    return ScenarioResult(spec_A.labels, counts, unclassified, disagree, tables, "local")


def run_joint_experiment(state: HybridState, partition: ObserverPartition, spec_A: BranchSpec,
                         spec_B: BranchSpec, n_walkers: int, seed: int, provider=None,
                         dt: float = 0.0, steps: int = 0) -> ScenarioResult:
    """Nonlocal law: one ensemble over A and B sampled from their joint density."""
    _check_specs(spec_A, spec_B)
    law = VelocityFieldSpec(partition.A + partition.B, MARGINALIZED)
    ens = sample_initial(state, law, n_walkers, seed, stream=STREAM_SAMPLE)
    final = state
    if steps:
        ens = integrate(ens, provider, law, dt, steps)
        final = provider.state_at(ens.time)
    counts, unclassified, disagree = _tabulate(classify_ensemble(ens, spec_A),
                                               classify_ensemble(ens, spec_B), spec_A.labels)
    tables = {"A": _born_table(final, spec_A, ens), "B": _born_table(final, spec_B, ens)}
    return ScenarioResult(spec_A.labels, counts, unclassified, disagree, tables, "joint")
