"""Branch supports, Born probabilities and empirical branch statistics."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import BadSubset, OverlappingBranches
from .hilbert import HybridState, marginal_density

DEFAULT_SIGMA_CUT = 5.0


@dataclass(frozen=True)
class Branch:
    """Axis-aligned support box ``lo <= x < hi`` over the pointer DOF."""

    label: object
    lo: tuple
    hi: tuple

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= np.asarray(self.lo)) & (pts < np.asarray(self.hi)), axis=1)


@dataclass(frozen=True)
class BranchSpec:
    pointer_dofs: tuple
    branches: tuple
    support_sigma_cut: float = DEFAULT_SIGMA_CUT

    def __post_init__(self):
        object.__setattr__(self, "pointer_dofs", tuple(self.pointer_dofs))
        object.__setattr__(self, "branches", tuple(self.branches))
        d = len(self.pointer_dofs)
        for b in self.branches:
            if len(b.lo) != d or len(b.hi) != d:
                raise BadSubset(f"branch {b.label!r} support does not match {d} pointer DOF")
        labels = [b.label for b in self.branches]
        if len(set(labels)) != len(labels):
            raise OverlappingBranches("branch labels must be unique")
        for a, b in itertools.combinations(self.branches, 2):
            if all(max(la, lb) < min(ha, hb) for la, ha, lb, hb in zip(a.lo, a.hi, b.lo, b.hi)):
                raise OverlappingBranches(f"supports of {a.label!r} and {b.label!r} intersect")

    @classmethod
    def from_packets(cls, pointer_dofs: Sequence[int], packets, width: float,
                     sigma_cut: float = DEFAULT_SIGMA_CUT) -> "BranchSpec":
        """``packets`` is a list of ``(label, centers)``; support is center +/- cut*width."""
        branches = []
        for label, centers in packets:
            centers = np.atleast_1d(np.asarray(centers, dtype=float))
            branches.append(Branch(label, tuple(centers - sigma_cut * width),
                                   tuple(centers + sigma_cut * width)))
        return cls(tuple(pointer_dofs), tuple(branches), sigma_cut)

    @property
    def labels(self) -> list:
        return [b.label for b in self.branches]

    def index_of(self, points) -> np.ndarray:
        """Branch index per point, -1 when no support contains it."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(len(pts), -1)
        for i, b in enumerate(self.branches):
            out[b.contains(pts)] = i
        return out


def _pointer_mesh(state: HybridState, spec: BranchSpec):
    dens = marginal_density(state, spec.pointer_dofs)
    coords = np.meshgrid(*[g.coords() for g in dens.grids], indexing="ij")
    pts = np.stack([c.ravel() for c in coords], axis=1)
    return dens.cell_masses().ravel(), pts


def born_probabilities(state: HybridState, spec: BranchSpec) -> list:
    """``[(label, p)]`` with p the pointer-marginal mass inside each support."""
    masses, pts = _pointer_mesh(state, spec)
    return [(b.label, float(masses[b.contains(pts)].sum())) for b in spec.branches]


def unsupported_mass(state: HybridState, spec: BranchSpec) -> float:
    masses, pts = _pointer_mesh(state, spec)
    return float(masses[spec.index_of(pts) < 0].sum())


def _pointer_columns(owned_dofs, spec: BranchSpec) -> list:
    owned = list(owned_dofs)
    try:
        return [owned.index(d) for d in spec.pointer_dofs]
    except ValueError as exc:
        raise BadSubset(f"pointer DOF {spec.pointer_dofs} are not all owned by {owned}") from exc


def classify(walker, spec: BranchSpec, owned_dofs: Optional[Sequence[int]] = None):
    """Label of the branch containing the walker, or None when unclassified."""
    pos = np.asarray(walker.position, dtype=float)
    if owned_dofs is not None:
        pos = pos[_pointer_columns(owned_dofs, spec)]
    if pos.shape != (len(spec.pointer_dofs),):
        raise BadSubset("walker dimensions do not match the pointer DOF")
    i = int(spec.index_of(pos[None, :])[0])
    return None if i < 0 else spec.branches[i].label


def classify_ensemble(ensemble, spec: BranchSpec) -> np.ndarray:
    cols = _pointer_columns(ensemble.owned_dofs, spec)
    return spec.index_of(ensemble.positions[:, cols])


def branch_frequencies(ensemble, spec: BranchSpec) -> list:
    """``[(label, fraction, stderr)]``; unclassified walkers count toward n only."""
    idx = classify_ensemble(ensemble, spec)
    n = len(idx)
    out = []
    for i, label in enumerate(spec.labels):
        f = float(np.count_nonzero(idx == i)) / n
        out.append((label, f, float(np.sqrt(f * (1 - f) / n))))
    return out


def write_results_csv(path, analytic, empirical, n) -> None:
    """Columns k, p_k analytic, fraction empirical, stderr, n."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "p_k", "fraction", "stderr", "n"])
        for (k, p), (_, f, se) in zip(analytic, empirical):
            writer.writerow([k, repr(float(p)), repr(float(f)), repr(float(se)), int(n)])
