"""Hidden-variable ensembles: sampling, RK4 transport and equivariance checks."""

from __future__ import annotations

import csv
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .dynamics import Potential, evolve
from .errors import ConfigError, StateUnavailable, ZeroState
from .hilbert import HybridState, marginal_density
from .rng import STREAM_SAMPLE, walker_uniforms
from .velocity import VelocityField, VelocityFieldSpec, velocity_field

log = logging.getLogger(__name__)

KS_COEFF = 1.63  # asymptotic Kolmogorov critical value at alpha ~ 0.01
MAX_HALVINGS = 8
TIME_TOL = 1e-9


@dataclass
class Walker:
    id: int
    position: np.ndarray
    frozen: bool = False
    history: Optional[list] = None


@dataclass
class Ensemble:
    """Walker positions over ``owned_dofs``, stored column-wise for vectorized work."""

    positions: np.ndarray
    owned_dofs: tuple
    seed: int
    time: float = 0.0
    ids: Optional[np.ndarray] = None
    frozen: Optional[np.ndarray] = None
    history: Optional[list] = None  # [(t, positions, frozen)] when recording

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        n = len(self.positions)
        if self.positions.shape[1] != len(self.owned_dofs):
            raise ConfigError("positions must have one column per owned DOF")
        self.ids = np.arange(n) if self.ids is None else np.asarray(self.ids)
        if len(np.unique(self.ids)) != n:
            raise ConfigError("walker ids must be unique")
        self.frozen = np.zeros(n, dtype=bool) if self.frozen is None else np.asarray(self.frozen, bool)

    def __len__(self):
        return len(self.positions)

    @property
    def walkers(self) -> list:
        out = []
        for i, wid in enumerate(self.ids):
            hist = None
            if self.history is not None:
                hist = [(t, pos[i].copy()) for t, pos, _ in self.history]
            out.append(Walker(int(wid), self.positions[i].copy(), bool(self.frozen[i]), hist))
        return out

    @property
    def frozen_fraction(self) -> float:
        return float(self.frozen.mean()) if len(self) else 0.0


def sample_initial(state: HybridState, spec: VelocityFieldSpec, n: int, seed: int,
                   stream: int = STREAM_SAMPLE, record_history: bool = False) -> Ensemble:
    """i.i.d. draws from the owned marginal: categorical cell, then uniform jitter."""
    if n < 1:
        raise ConfigError("need at least one walker")
    dens = marginal_density(state, spec.owned_dofs)
    masses = dens.values.ravel()
    total = masses.sum()
    if not total > 0:
        raise ZeroState("owned marginal density vanishes")
    cdf = np.cumsum(masses)
    ids = np.arange(n)
    u = walker_uniforms(seed, stream, ids, 1 + len(spec.owned_dofs))
    flat = np.searchsorted(cdf, u[:, 0] * cdf[-1], side="right")
    flat = np.minimum(flat, masses.size - 1)
    cells = np.unravel_index(flat, dens.values.shape)
    pos = np.empty((n, len(spec.owned_dofs)))
    for j, g in enumerate(dens.grids):
        pos[:, j] = g.wrap(g.coords()[cells[j]] + (u[:, 1 + j] - 0.5) * g.dx)
    ens = Ensemble(pos, spec.owned_dofs, seed, state.time, ids)
    if record_history:
        ens.history = [(state.time, pos.copy(), ens.frozen.copy())]
    return ens


def _time_key(t: float) -> float:
    return round(t, 9)


class StaticProvider:
    """Same state at every time."""

    def __init__(self, state: HybridState):
        self.state = state

    def state_at(self, t: float) -> HybridState:
        return self.state


class CallableProvider:
    def __init__(self, fn: Callable[[float], HybridState]):
        self.fn = fn

    def state_at(self, t: float) -> HybridState:
        return self.fn(t)


class SchrodingerProvider:
    """States from split-step propagation, cached on a ``substep`` lattice.

    Times off the lattice are reached by one shorter step from the nearest
    earlier lattice state.  Only the most recent ``keep`` lattice states are
    held; earlier times are recomputed from the initial state.
    """

    def __init__(self, initial: HybridState, potential: Optional[Potential], substep: float,
                 keep: int = 8, workers: Optional[int] = None):
        if not substep > 0:
            raise ConfigError("substep must be positive")
        self.initial = initial
        self.potential = potential
        self.substep = float(substep)
        self.keep = keep
        self.workers = workers
        self._cache: "OrderedDict[int, HybridState]" = OrderedDict([(0, initial)])

    def _lattice(self, m: int) -> HybridState:
        if m in self._cache:
            return self._cache[m]
        start = max((k for k in self._cache if k <= m), default=None)
        if start is None:
            start, state = 0, self.initial
        else:
            state = self._cache[start]
        for k in range(start + 1, m + 1):
            state = evolve(state, self.potential, self.substep, 1, workers=self.workers)
            state = replace(state, time=self.initial.time + k * self.substep)
            self._cache[k] = state
            while len(self._cache) > self.keep:
                self._cache.popitem(last=False)
        return state

    def state_at(self, t: float) -> HybridState:
        s = (t - self.initial.time) / self.substep
        if s < -TIME_TOL:
            raise StateUnavailable(f"t={t} precedes the provider's initial time")
        m = int(np.floor(s + TIME_TOL))
        base = self._lattice(m)
        rest = t - base.time
        if rest <= TIME_TOL * self.substep:
            return base
        extra = evolve(base, self.potential, rest, 1, workers=self.workers)
        return replace(extra, time=t)


class _FieldCache:
    def __init__(self, provider, spec: VelocityFieldSpec, size: int = 16):
        self.provider = provider
        self.spec = spec
        self.size = size
        self._fields: "OrderedDict[float, VelocityField]" = OrderedDict()

    def __call__(self, t: float) -> VelocityField:
        key = _time_key(t)
        f = self._fields.get(key)
        if f is None:
            f = velocity_field(self.provider.state_at(t), self.spec)
            self._fields[key] = f
            while len(self._fields) > self.size:
                self._fields.popitem(last=False)
        return f


def _rk4(fields, x, t, dt, scale):
    """One RK4 step; returns (new positions, flagged mask)."""
    f0, fh, f1 = fields(t), fields(t + 0.5 * dt), fields(t + dt)
    k1, _, n1 = f0.sample(x)
    k2, _, n2 = fh.sample(x + 0.5 * dt * scale * k1)
    k3, _, n3 = fh.sample(x + 0.5 * dt * scale * k2)
    k4, _, n4 = f1.sample(x + dt * scale * k3)
    x_new = x + dt * scale * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return x_new, n1 | n2 | n3 | n4


def _wrap(fields_grids, x):
    for j, g in enumerate(fields_grids):
        x[:, j] = g.wrap(x[:, j])
    return x


def integrate(ensemble: Ensemble, states_over_time, spec: VelocityFieldSpec, dt: float, steps: int,
              velocity_scale: float = 1.0, record_every: Optional[int] = None) -> Ensemble:
    """Advance walkers by classical RK4 on fields at t, t+dt/2 and t+dt.

    Walkers whose stages touch a node cell retry the step with dt halved up to
    eight times and are then frozen.  ``velocity_scale`` multiplies the field
    (used for deliberately broken controls).
    """
    if tuple(ensemble.owned_dofs) != tuple(spec.owned_dofs):
        raise ConfigError("ensemble and velocity spec own different DOF")
    if not dt > 0:
        raise ConfigError("dt must be positive")
    fields = _FieldCache(states_over_time, spec)
    x = ensemble.positions.copy()
    frozen = ensemble.frozen.copy()
    history = None if ensemble.history is None else list(ensemble.history)
    t = ensemble.time
    grids = None
    for step in range(int(steps)):
        active = ~frozen
        if grids is None:
            grids = fields(t).grids
        x_new, bad = _rk4(fields, x[active], t, dt, velocity_scale)
        if bad.any():
            idx = np.flatnonzero(active)[bad]
            x_new[bad], still = _refine(fields, x[idx], t, dt, velocity_scale)
            if still.any():
                log.warning("freezing %d walkers at nodes near t=%g", int(still.sum()), t)
                frozen[idx[still]] = True
                x_new[np.flatnonzero(bad)[still]] = x[idx[still]]
        x[active] = x_new
        x = _wrap(grids, x)
        t = ensemble.time + (step + 1) * dt
        if history is not None and (record_every is None or (step + 1) % record_every == 0):
            history.append((t, x.copy(), frozen.copy()))
    return Ensemble(x, ensemble.owned_dofs, ensemble.seed, t, ensemble.ids.copy(), frozen, history)


def _refine(fields, x, t, dt, scale):
    """Retry flagged walkers with successively halved steps."""
    out = x.copy()
    pending = np.ones(len(x), dtype=bool)
    for level in range(1, MAX_HALVINGS + 1):
        n_sub = 2**level
        h = dt / n_sub
        y = x[pending].copy()
        ok = np.ones(len(y), dtype=bool)
        for i in range(n_sub):
            y, bad = _rk4(fields, y, t + i * h, h, scale)
            ok &= ~bad
        sel = np.flatnonzero(pending)
        out[sel[ok]] = y[ok]
        pending[sel[ok]] = False
        if not pending.any():
            break
    return out, pending


@dataclass
class EquivarianceResult:
    statistic: float
    passed: bool
    threshold: float
    per_dof: dict = field(default_factory=dict)
    chi2: Optional[float] = None
    chi2_pvalue: Optional[float] = None

    def __iter__(self):
        yield self.statistic
        yield self.passed


def cell_cdf(density_1d) -> Callable:
    """Piecewise-linear CDF of a 1-D density that is constant on each cell."""
    g = density_1d.grids[0]
    edges = g.lower + g.dx * np.arange(g.n_points + 1)
    masses = density_1d.cell_masses()
    cdf = np.concatenate([[0.0], np.cumsum(masses)]) / masses.sum()
    return lambda x: np.interp(x, edges, cdf)


def ks_distance(samples, density_1d) -> float:
    return float(stats.kstest(np.asarray(samples, dtype=float), cell_cdf(density_1d)).statistic)


def _chi2_2d(ensemble: Ensemble, state: HybridState, dofs, bins: int = 16):
    dens = marginal_density(state, dofs)
    g0, g1 = dens.grids
    m = dens.cell_masses()
    f0, f1 = g0.n_points // bins, g1.n_points // bins
    if f0 < 1 or f1 < 1:
        return None, None
    coarse = m[: f0 * bins, : f1 * bins].reshape(bins, f0, bins, f1).sum(axis=(1, 3))
    cols = [ensemble.owned_dofs.index(d) for d in dofs]
    i0 = np.clip(((ensemble.positions[:, cols[0]] - g0.lower) / g0.dx).astype(int) // f0, 0, bins - 1)
    i1 = np.clip(((ensemble.positions[:, cols[1]] - g1.lower) / g1.dx).astype(int) // f1, 0, bins - 1)
    counts = np.zeros((bins, bins))
    np.add.at(counts, (i0, i1), 1)
    expected = coarse / coarse.sum() * len(ensemble)
    keep = expected >= 5
    chi = float(((counts[keep] - expected[keep]) ** 2 / expected[keep]).sum())
    dof = max(int(keep.sum()) - 1, 1)
    return chi, float(stats.chi2.sf(chi, dof))


def equivariance_test(ensemble: Ensemble, state: HybridState, spec: VelocityFieldSpec) -> EquivarianceResult:
    """KS distance of each owned-DOF projection against the quantum marginal."""
    n = len(ensemble)
    threshold = KS_COEFF / np.sqrt(n)
    per = {}
    for j, d in enumerate(spec.owned_dofs):
        per[d] = ks_distance(ensemble.positions[:, j], marginal_density(state, [d]))
    chi = p = None
    if len(spec.owned_dofs) >= 2:
        chi, p = _chi2_2d(ensemble, state, spec.owned_dofs[:2])
    stat = max(per.values())
    return EquivarianceResult(stat, bool(stat < threshold), float(threshold), per, chi, p)


def write_trajectory_jsonl(path, ensemble: Ensemble) -> None:
    """One record per (walker, checkpoint): {"id", "t", "x", "frozen"}."""
    history = ensemble.history or [(ensemble.time, ensemble.positions, ensemble.frozen)]
    with open(path, "w") as fh:
        for t, pos, frozen in history:
            for i, wid in enumerate(ensemble.ids):
                rec = {"id": int(wid), "t": float(t), "x": [float(v) for v in pos[i]],
                       "frozen": bool(frozen[i])}
                fh.write(json.dumps(rec) + "\n")


def write_summary_csv(path, rows, owned_dofs) -> None:
    """Rows of ``(time, {dof: ks}, frozen_fraction)``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"ks_x{d}" for d in owned_dofs] + ["frozen_fraction"])
        for t, ks, frozen in rows:
            writer.writerow([repr(float(t))] + [repr(float(ks[d])) for d in owned_dofs]
                            + [repr(float(frozen))])
