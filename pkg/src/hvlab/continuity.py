"""Finite-difference residual of the (marginal) continuity equation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hilbert import HybridState, marginal_density
from .velocity import _sum_out, current_density, gradient


@dataclass(frozen=True)
class ContinuityResidual:
    l2: float
    max_abs: float
    n_cells: int


def continuity_residual(before: HybridState, middle: HybridState, after: HybridState, owned,
                        divergence: str = "central2", current: str = "spectral",
                        smooth_fraction: float = 1e-3) -> ContinuityResidual:
    """Residual of d(rho_S)/dt + sum_b d_b(j_b) at ``middle``.

    The time derivative is the centred difference of the owned marginal
    between ``before`` and ``after``; ``j_b`` is the traced current of DOF b,
    differentiated with ``divergence``.  Only cells where the marginal
    exceeds ``smooth_fraction`` of its maximum contribute.
    """
    owned = tuple(owned)
    span = after.time - before.time
    drho = (marginal_density(after, owned).values - marginal_density(before, owned).values) / span
    rho = marginal_density(middle, owned)
    div = np.zeros_like(drho)
    for j, b in enumerate(owned):
        jb = _sum_out(middle, current_density(middle, b, current), owned)
        div += np.real(gradient(jb, j, middle.grids[b], divergence))
    res = drho + div
    mask = rho.values > smooth_fraction * rho.values.max()
    l2 = float(np.sqrt(np.sum(res[mask] ** 2) * rho.cell_volume))
    return ContinuityResidual(l2, float(np.max(np.abs(res[mask]))), int(mask.sum()))


def observed_order(coarse: float, fine: float, ratio: float = 2.0) -> float:
    return float(np.log(coarse / fine) / np.log(ratio))
