"""Scenario runners used by the CLI: build the model, run it, score it."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import continuity as cont
from . import reduced
from .config import AppendixConfig, ContinuityConfig, ExperimentConfig, ModelConfig
from .dynamics import (
    MeasurementModel,
    apply_measurement,
    barrier_potential,
    evolve,
    harmonic_potential,
    zero_potential,
)
from .errors import ConfigError
from .hilbert import Grid1D, HybridState, marginal_density, state_from_terms, write_density_csv
from .measurement import (
    BranchSpec,
    born_probabilities,
    branch_frequencies,
    unsupported_mass,
    write_results_csv,
)
from .observers import (
    ANTICORRELATED,
    DOWN,
    SHARED,
    UP,
    EPRGeometry,
    ObserverPartition,
    build_epr_state,
    joint_velocity,
    local_velocities,
    run_disagreement_experiment,
    run_joint_experiment,
)
from .trajectories import (
    Ensemble,
    SchrodingerProvider,
    equivariance_test,
    integrate,
    sample_initial,
    write_summary_csv,
    write_trajectory_jsonl,
)
from .velocity import VelocityFieldSpec, no_signaling_velocity_check, velocity_field, write_velocity_raster


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    relation: str  # "<", ">", "<=" or ">="
    passed: bool = field(init=False)

    def __post_init__(self):
        ops = {"<": np.less, ">": np.greater, "<=": np.less_equal, ">=": np.greater_equal}
        self.passed = bool(ops[self.relation](self.value, self.threshold))

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.6g} {self.relation} {self.threshold:.6g}"

    def to_json(self) -> dict:
        return {"name": self.name, "value": float(self.value), "threshold": float(self.threshold),
                "relation": self.relation, "passed": self.passed}


@dataclass
class Outcome:
    scenario: str
    checks: List[Check]
    files: List[str]
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


# --- model construction -------------------------------------------------------

def as_complex(v) -> complex:
    return complex(v[0], v[1]) if isinstance(v, list) else complex(v)


def build_grids(model: ModelConfig, refine: int = 0) -> tuple:
    """Grids from the config, each refined ``refine`` times (n doubled, dx halved)."""
    grids, masses = [], []
    for gc in model.grids:
        n, dx = gc.n_points * 2**refine, gc.dx / 2**refine
        x0 = -0.5 * gc.n_points * gc.dx if gc.x0 is None else gc.x0
        if gc.x0 is not None and refine:
            x0 = gc.x0 - 0.5 * gc.dx + 0.5 * dx  # keep the same cell boundaries
        grids.append(Grid1D(n, dx, x0, gc.periodic))
        masses.append(gc.mass)
    return grids, masses


def build_state(model: ModelConfig, refine: int = 0) -> HybridState:
    grids, masses = build_grids(model, refine)
    if not grids:
        raise ConfigError("model.grids: at least one grid is required")
    terms = []
    for i, t in enumerate(model.terms):
        if len(t.packets) != len(grids):
            raise ConfigError(f"model.terms[{i}].packets: need one packet per grid ({len(grids)})")
        if len(t.labels) != len(model.discrete_dims):
            raise ConfigError(f"model.terms[{i}].labels: need one label per discrete factor")
        if any(not 0 <= l < d for l, d in zip(t.labels, model.discrete_dims)):
            raise ConfigError(f"model.terms[{i}].labels: label out of range")
        terms.append((as_complex(t.amplitude), t.labels, [p.model_dump() for p in t.packets]))
    return state_from_terms(grids, masses, terms, model.discrete_dims, model.hbar)


def build_potential(model: ModelConfig):
    pc = model.potential
    if pc is None or pc.kind == "zero":
        return zero_potential()
    _, masses = build_grids(model)
    if pc.kind == "harmonic":
        if pc.omega is None or len(pc.omega) != len(masses):
            raise ConfigError("model.potential.omega: one frequency per grid is required")
        return harmonic_potential(pc.omega, masses, pc.center)
    if pc.dof is None or pc.height is None or pc.lo is None or pc.hi is None:
        raise ConfigError("model.potential: barrier needs dof, height, lo and hi")
    return barrier_potential(pc.dof, pc.height, pc.lo, pc.hi)


def _owned(model: ModelConfig, state: HybridState) -> tuple:
    owned = tuple(model.owned_dofs) if model.owned_dofs else tuple(range(state.n_dofs))
    if any(not 0 <= d < state.n_dofs for d in owned) or len(set(owned)) != len(owned):
        raise ConfigError(f"model.owned_dofs: invalid DOF list {list(owned)}")
    return owned


def _binomial_check(name: str, observed: float, expected: float, n: int, sigmas: float) -> Check:
    se = max(np.sqrt(expected * (1 - expected) / n), 1.0 / n)
    return Check(name, abs(observed - expected), sigmas * se, "<=")


def _subset(ensemble: Ensemble, k: int) -> Ensemble:
    k = min(k, len(ensemble))
    hist = None
    if ensemble.history is not None:
        hist = [(t, p[:k], f[:k]) for t, p, f in ensemble.history]
    return Ensemble(ensemble.positions[:k], ensemble.owned_dofs, ensemble.seed, ensemble.time,
                    ensemble.ids[:k], ensemble.frozen[:k], hist)


class _Writer:
    def __init__(self, out_dir: Path, formats):
        self.out_dir = out_dir
        self.formats = set(formats)
        self.files: List[str] = []

    def want(self, fmt: str) -> bool:
        return fmt in self.formats

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out_dir / name

    def json(self, name: str, obj) -> None:
        if self.want("json"):
            with open(self.path(name), "w") as fh:
                json.dump(obj, fh, indent=2, sort_keys=True)
                fh.write("\n")


# --- scenarios ----------------------------------------------------------------

def run_born(cfg: ExperimentConfig, out: _Writer, workers=None) -> Outcome:
    model, num, tol = cfg.model, cfg.numerics, cfg.numerics.tolerances
    mc = model.measurement
    state = build_state(model)
    if not 0 <= mc.pointer_dof < state.n_dofs:
        raise ConfigError("model.measurement.pointer_dof: no such grid")
    if not 0 <= mc.factor < state.n_discrete:
        raise ConfigError("model.measurement.factor: no such discrete factor")
    pointer = model.terms[0].packets[mc.pointer_dof]
    mm = MeasurementModel(mc.pointer_dof, tuple(mc.eigenvalues), mc.coupling, mc.duration, mc.factor,
                          {"center": pointer.center, "width": pointer.width}, mc.destroy)
    # |c_k|^2 recorded at preparation
    other = tuple(i for i in range(state.n_dofs + state.n_discrete) if i != mc.factor)
    prepared = (np.abs(state.amplitudes) ** 2).sum(axis=other) * state.cell_volume
    post = apply_measurement(state, mm)
    spec = BranchSpec.from_packets([mc.pointer_dof],
                                   [(k, [c]) for k, c in enumerate(mm.pointer_centers())],
                                   pointer.width, mc.support_sigma_cut)
    law = VelocityFieldSpec((mc.pointer_dof,))
    ens = sample_initial(post, law, num.n_walkers, num.seed, record_history=True)
    final = post
    if num.steps:
        if num.dt is None:
            raise ConfigError("numerics.dt is required when numerics.steps > 0")
        provider = SchrodingerProvider(post, build_potential(model), num.dt / 2, workers=workers)
        ens = integrate(ens, provider, law, num.dt, num.steps, record_every=num.steps)
        final = provider.state_at(ens.time)
    analytic = born_probabilities(final, spec)
    freq = branch_frequencies(ens, spec)
    n = len(ens)
    checks = []
    for (k, p), (_, f, _se), c2 in zip(analytic, freq, prepared):
        checks.append(_binomial_check(f"frequency[{k}] vs |c_k|^2", f, float(c2), n, tol.sigma))
        checks.append(Check(f"p[{k}] vs |c_k|^2", abs(p - float(c2)), 1e-6, "<="))
    unclassified = 1.0 - sum(f for _, f, _ in freq)
    checks.append(Check("unclassified fraction", unclassified, tol.unclassified_max, "<"))
    checks.append(Check("mass outside supports", unsupported_mass(final, spec), 1e-6, "<"))
    if out.want("csv"):
        write_results_csv(out.path("results.csv"), analytic, freq, n)
        write_density_csv(out.path("pointer_density.csv"), marginal_density(final, [mc.pointer_dof]))
    if out.want("jsonl"):
        write_trajectory_jsonl(out.path("trajectories.jsonl"), _subset(ens, cfg.outputs.export_walkers))
    return Outcome(cfg.scenario, checks, out.files,
                   {"prepared": [float(c) for c in prepared], "analytic": analytic, "empirical": freq})


def run_equivariance(cfg: ExperimentConfig, out: _Writer, workers=None) -> Outcome:
    model, num, tol = cfg.model, cfg.numerics, cfg.numerics.tolerances
    state = build_state(model)
    owned = _owned(model, state)
    law = VelocityFieldSpec(owned)
    provider = SchrodingerProvider(state, build_potential(model), num.dt / 2, workers=workers)
    chunk = max(num.steps // num.checkpoints, 1)
    coeff = tol.ks_coefficient
    results = {}
    for tag, scale in (("law", 1.0), ("control", num.control_scale)):
        ens = sample_initial(state, law, num.n_walkers, num.seed, record_history=True)
        rows = []
        done = 0
        while done < num.steps:
            m = min(chunk, num.steps - done)
            ens = integrate(ens, provider, law, num.dt, m, velocity_scale=scale, record_every=m)
            done += m
            r = equivariance_test(ens, provider.state_at(ens.time), law)
            rows.append((ens.time, r.per_dof, ens.frozen_fraction))
        results[tag] = (ens, rows)
    threshold = coeff / np.sqrt(num.n_walkers)
    ens, rows = results["law"]
    worst = max(max(ks.values()) for _, ks, _ in rows)
    _, crow = results["control"]
    control_worst = max(max(ks.values()) for _, ks, _ in crow)
    checks = [
        Check("max KS distance under the marginalized law", worst, threshold, "<"),
        Check("frozen walker fraction", ens.frozen_fraction, tol.frozen_max, "<"),
        Check(f"max KS distance with velocities x{num.control_scale:g} (control)", control_worst,
              threshold, ">="),
    ]
    if out.want("csv"):
        write_summary_csv(out.path("summary.csv"), rows, owned)
        write_summary_csv(out.path("summary_control.csv"), crow, owned)
    if out.want("jsonl"):
        write_trajectory_jsonl(out.path("trajectories.jsonl"), _subset(ens, cfg.outputs.export_walkers))
    return Outcome(cfg.scenario, checks, out.files, {"ks_rows": rows, "control_rows": crow})


def _epr_setup(cfg: ExperimentConfig, kind: Optional[str] = None, separation: Optional[float] = None,
               overlap_eps: Optional[float] = None):
    ec = cfg.model.epr
    geometry = EPRGeometry(ec.n_points, ec.dx, ec.width, ec.separation if separation is None else separation,
                           cfg.model.grids[0].mass if cfg.model.grids else 1.0, cfg.model.hbar)
    amps = [as_complex(a) for a in ec.amplitudes]
    state = build_epr_state(kind or ec.kind, amps, geometry, overlap_eps=overlap_eps)
    partition = ObserverPartition.from_lists([0], [1])
    return state, geometry, partition, amps


def _provider(cfg, state, workers):
    num = cfg.numerics
    if not num.steps:
        return None
    if num.dt is None:
        raise ConfigError("numerics.dt is required when numerics.steps > 0")
    return SchrodingerProvider(state, None, num.dt / 2, workers=workers)


def _born_checks(result, amps, kind, n, sigmas, tag) -> list:
    p_up = abs(amps[0]) ** 2
    # Bob reads "down" in the first branch of the anticorrelated state
    expected = {"A": {UP: p_up, DOWN: 1 - p_up},
                "B": {UP: 1 - p_up, DOWN: p_up} if kind == ANTICORRELATED else {UP: p_up, DOWN: 1 - p_up}}
    checks = []
    for obs, rows in result.born_tables.items():
        for k, p, f, _se in rows:
            checks.append(_binomial_check(f"{tag} Born {obs}[{k}]", f, expected[obs][k], n, sigmas))
    return checks


def _allowed_pairs(kind):
    return [(UP, DOWN), (DOWN, UP)] if kind == ANTICORRELATED else [(UP, UP), (DOWN, DOWN)]


def _write_result(out: _Writer, name: str, result) -> None:
    out.json(name, result.to_json())
    if out.want("csv"):
        with open(out.path(name.replace(".json", "_born.csv")), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["observer", "k", "p_k", "fraction", "stderr", "n"])
            for obs, rows in result.born_tables.items():
                for k, p, f, se in rows:
                    writer.writerow([obs, k, repr(float(p)), repr(float(f)), repr(float(se)),
                                     result.n_classified + result.unclassified])


def run_epr_nonlocal(cfg: ExperimentConfig, out: _Writer, workers=None) -> Outcome:
    num, tol = cfg.numerics, cfg.numerics.tolerances
    kind = cfg.model.epr.kind
    state, geometry, partition, amps = _epr_setup(cfg)
    spec_A, spec_B = geometry.branch_spec(0), geometry.branch_spec(1)
    provider = _provider(cfg, state, workers)
    res = run_joint_experiment(state, partition, spec_A, spec_B, num.n_walkers, num.seed, provider,
                               num.dt or 0.0, num.steps)
    cross = 1.0 - res.fraction(_allowed_pairs(kind))
    checks = [Check("cross-branch joint occupancy", cross, tol.cross_branch_max, "<"),
              Check("unclassified fraction", res.unclassified / num.n_walkers, tol.unclassified_max, "<")]
    checks += _born_checks(res, amps, kind, num.n_walkers, tol.sigma, "joint")

    # nonlocality witness: pointer packets close enough that both branches
    # carry density at the same Alice coordinate
    w_state, w_geom, _, _ = _epr_setup(cfg, separation=3.0 * geometry.width, overlap_eps=np.inf)
    w_state = evolve(w_state, None, 0.05, 20, workers=workers)
    c = w_geom.centers()
    x_a = 0.25 * w_geom.separation
    v1 = joint_velocity(w_state, partition, [x_a, c[DOWN]]).velocity[0]
    v2 = joint_velocity(w_state, partition, [x_a, c[UP]]).velocity[0]
    checks.append(Check("joint-law A velocity change when B changes branch", abs(v1 - v2),
                        tol.control_min, ">"))
    _write_result(out, "result.json", res)
    return Outcome(cfg.scenario, checks, out.files, {"result": res.to_json(), "witness": [v1, v2]})


def _locality_sweep(state, partition, point_A, points_B) -> int:
    values = {local_velocities(state, partition, [point_A], [xb])[0].velocity.tobytes() for xb in points_B}
    return len(values)


def run_epr_local(cfg: ExperimentConfig, out: _Writer, workers=None) -> Outcome:
    num, tol = cfg.numerics, cfg.numerics.tolerances
    kind = cfg.model.epr.kind
    state, geometry, partition, amps = _epr_setup(cfg)
    spec_A, spec_B = geometry.branch_spec(0), geometry.branch_spec(1)
    provider = _provider(cfg, state, workers)
    res = run_disagreement_experiment(state, partition, spec_A, spec_B, num.n_walkers, num.seed,
                                      provider, num.dt or 0.0, num.steps)
    n_pairs = res.n_classified
    p_up = abs(amps[0]) ** 2
    consistent = p_up**2 + (1 - p_up) ** 2 if kind == ANTICORRELATED else 2 * p_up * (1 - p_up)
    # under the local law pairs land in "allowed" cells only by independent coincidence
    observed = res.fraction(_allowed_pairs(kind) if kind == ANTICORRELATED else [(UP, DOWN), (DOWN, UP)])
    checks = _born_checks(res, amps, kind, num.n_walkers, tol.sigma, "local")
    checks.append(_binomial_check("independent pairing vs product rule", observed, consistent,
                                  max(n_pairs, 1), tol.sigma))
    c = geometry.centers()
    # B sweeps across both branch supports
    sweep = np.concatenate([np.linspace(c[DOWN] - 1, c[DOWN] + 1, 5), np.linspace(c[UP] - 1, c[UP] + 1, 5)])
    checks.append(Check("distinct A velocities over a B sweep", _locality_sweep(state, partition, c[UP] + 0.5, sweep),
                        1, "<="))
    _write_result(out, "result.json", res)
    return Outcome(cfg.scenario, checks, out.files, {"result": res.to_json()})


def run_disagreement(cfg: ExperimentConfig, out: _Writer, workers=None) -> Outcome:
    num, tol = cfg.numerics, cfg.numerics.tolerances
    state, geometry, partition, amps = _epr_setup(cfg, kind=SHARED)
    spec_A, spec_B = geometry.branch_spec(0), geometry.branch_spec(1)
    provider = _provider(cfg, state, workers)
    local = run_disagreement_experiment(state, partition, spec_A, spec_B, num.n_walkers, num.seed,
                                        provider, num.dt or 0.0, num.steps)
    joint = run_joint_experiment(state, partition, spec_A, spec_B, num.n_walkers, num.seed,
                                 provider, num.dt or 0.0, num.steps)
    p_up = abs(amps[0]) ** 2
    expected = 2 * p_up * (1 - p_up)
    checks = [
        _binomial_check("local-law disagreement rate", local.disagreement_rate, expected,
                        max(local.n_classified, 1), tol.sigma),
        Check("joint-law disagreement rate", joint.disagreement_rate, tol.cross_branch_max, "<"),
    ]
    checks += _born_checks(local, amps, SHARED, num.n_walkers, tol.sigma, "local")
    checks += _born_checks(joint, amps, SHARED, num.n_walkers, tol.sigma, "joint")
    _write_result(out, "result_local.json", local)
    _write_result(out, "result_joint.json", joint)
    return Outcome(cfg.scenario, checks, out.files,
                   {"local": local.to_json(), "joint": joint.to_json(), "expected_rate": expected})


def apply_config_unitary(state: HybridState, u) -> HybridState:
    psi = np.array(state.amplitudes)
    if u.kind in ("label-phase", "label-mix"):
        if not 0 <= u.factor < state.n_discrete or state.discrete_dims[u.factor] < 2:
            raise ConfigError(f"unitary {u.kind}: factor {u.factor} needs at least two labels")
        psi = np.moveaxis(psi, u.factor, 0)
        if u.kind == "label-phase":
            psi[1] = psi[1] * np.exp(1j * u.phase)
        else:
            c, s = np.cos(u.angle), np.sin(u.angle)
            psi[0], psi[1] = c * psi[0] - s * psi[1], s * psi[0] + c * psi[1]
        return state.with_amplitudes(np.moveaxis(psi, 0, u.factor))
    if not 0 <= u.dof < state.n_dofs:
        raise ConfigError(f"unitary {u.kind}: no DOF {u.dof}")
    if u.kind == "free-evolution":
        return evolve(state, None, u.time, 1, dofs=[u.dof])
    x = state.mesh()[u.dof]
    return state.with_amplitudes(psi * np.exp(1j * u.strength * x))


def run_no_signaling(cfg: ExperimentConfig, out: _Writer, workers=None) -> Outcome:
    model, num, tol = cfg.model, cfg.numerics, cfg.numerics.tolerances
    state = build_state(model)
    owned = _owned(model, state)
    spec = VelocityFieldSpec(owned)
    field_ = velocity_field(state, spec)
    probes = sample_initial(state, spec, num.n_probes, num.seed).positions
    _, rho, _ = field_.sample(probes)
    probes = probes[rho > 1e-6 * field_.density.max()]
    checks, rows = [], []
    for i, u in enumerate(model.unitaries):
        touches_owned = u.kind in ("free-evolution", "kick") and u.dof in owned
        if touches_owned != u.control:
            raise ConfigError(f"model.unitaries[{i}]: control={u.control} but the unitary "
                              f"{'acts' if touches_owned else 'does not act'} on an owned DOF")
        other = apply_config_unitary(state, u)
        dev = no_signaling_velocity_check([(state, other)], spec, probes)
        name = f"{u.kind}[{i}]" + (" (control)" if u.control else "")
        chk = Check(f"velocity change under {name}", dev, tol.control_min if u.control else tol.no_signaling,
                    ">" if u.control else "<")
        checks.append(chk)
        rows.append((name, dev, chk.threshold, chk.passed))
    if out.want("csv"):
        with open(out.path("results.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["unitary", "max_velocity_change", "threshold", "passed"])
            for name, dev, thr, ok in rows:
                writer.writerow([name, repr(float(dev)), repr(float(thr)), int(ok)])
    return Outcome(cfg.scenario, checks, out.files, {"rows": rows, "n_probes": len(probes)})


def continuity_study(model: ModelConfig, dt: float, owned, levels: int, t_mid: float, dt_fine: float,
                     workers=None) -> dict:
    """Residual norms for a dt-halving sweep and a dx-halving sweep."""
    potential = build_potential(model)

    def residual(refine, step, divergence):
        s = build_state(model, refine)
        m = int(round(t_mid / step))
        before = evolve(s, potential, step, m - 1, workers=workers)
        middle = evolve(before, potential, step, 1, workers=workers)
        after = evolve(middle, potential, step, 1, workers=workers)
        return cont.continuity_residual(before, middle, after, owned, divergence=divergence).l2

    finest = levels - 1
    dx0 = model.grids[0].dx
    rows = []
    for i in range(levels):
        step = dt / 2**i
        rows.append(("dt", model.grids[0].n_points * 2**finest, dx0 / 2**finest, step,
                     residual(finest, step, "spectral")))
    for i in range(levels):
        rows.append(("dx", model.grids[0].n_points * 2**i, dx0 / 2**i, dt_fine,
                     residual(i, dt_fine, "central2")))
    return {"rows": rows}


def run_continuity(cfg: ExperimentConfig, out: _Writer, workers=None) -> Outcome:
    model, num, tol = cfg.model, cfg.numerics, cfg.numerics.tolerances
    cc = model.continuity or ContinuityConfig()
    checks, table = [], []
    for owned in cc.owned_sets:
        study = continuity_study(model, num.dt, tuple(owned), cc.levels, cc.t_mid, cc.dt_fine, workers)
        rows = study["rows"]
        tag = ",".join(str(d) for d in owned)
        const = 0.0
        for sweep in ("dt", "dx"):
            sel = [r for r in rows if r[0] == sweep]
            prev = None
            for r in sel:
                order = None if prev is None else cont.observed_order(prev[4], r[4])
                if order is not None:
                    step = prev[3] if sweep == "dt" else prev[2]
                    checks.append(Check(f"S={{{tag}}} {sweep}-halving order ({step:.4g})",
                                        order, tol.min_order, ">="))
                table.append((tag,) + tuple(r) + (order,))
                const = max(const, r[4] / (r[3] ** 2 + r[2] ** 2))
                prev = r
        table.append((tag, "constant", None, None, None, const, None))
    if out.want("csv"):
        with open(out.path("convergence.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["owned", "sweep", "n_points", "dx", "dt", "residual_l2", "order"])
            for row in table:
                writer.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v)
                                 for v in row])
    return Outcome(cfg.scenario, checks, out.files, {"table": table})


def appendix_trials(dims, n_hamiltonians: int, t: float, coupling: float, seed: int) -> list:
    """Rows ``(dims, case, deviation)`` for one bipartite dimension pair."""
    rng = np.random.default_rng([seed, dims[0], dims[1]])
    d_a, d_b = dims
    psi0 = reduced.random_pure_state(d_a * d_b, rng)
    O_A = reduced.random_hermitian(d_a, rng)
    H_A = reduced.random_hermitian(d_a, rng)
    H_Bs = [np.zeros((d_b, d_b))] + [reduced.random_hermitian(d_b, rng) for _ in range(n_hamiltonians - 2)]
    H_Bs.append(7.5 * H_Bs[-1])
    rows = [(dims, "factorized", reduced.appendix_invariance_check(psi0, O_A, H_A, H_Bs, t))]
    rows.append((dims, "identity-observable",
                 reduced.appendix_invariance_check(psi0, np.eye(d_a), H_A, H_Bs, t)))
    rows.append((dims, "interacting-control",
                 reduced.appendix_invariance_check(psi0, O_A, H_A, H_Bs, t, coupling=coupling)))
    return rows


def run_appendix(cfg: ExperimentConfig, out: _Writer, workers=None) -> Outcome:
    ac = cfg.model.appendix or AppendixConfig()
    tol = cfg.numerics.tolerances
    checks, rows = [], []
    for dims in ac.dims:
        if len(dims) != 2 or min(dims) < 1:
            raise ConfigError("model.appendix.dims: entries must be [d_A, d_B]")
        for d, case, dev in appendix_trials(tuple(dims), ac.n_hamiltonians, ac.t, ac.coupling,
                                            cfg.numerics.seed):
            label = f"{d[0]}x{d[1]} {case}"
            if case == "interacting-control":
                chk = Check(label, dev, tol.control_min, ">")
            elif case == "identity-observable":
                chk = Check(label, dev, 1e-12, "<")
            else:
                chk = Check(label, dev, tol.appendix, "<")
            checks.append(chk)
            rows.append((f"{d[0]}x{d[1]}", case, dev, chk.threshold, chk.passed))
    if out.want("csv"):
        with open(out.path("results.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["dims", "case", "deviation", "threshold", "passed"])
            for dims, case, dev, thr, ok in rows:
                writer.writerow([dims, case, repr(float(dev)), repr(float(thr)), int(ok)])
    return Outcome(cfg.scenario, checks, out.files, {"rows": rows})


RUNNERS: Dict[str, Callable] = {
    "born": run_born,
    "equivariance": run_equivariance,
    "epr-nonlocal": run_epr_nonlocal,
    "epr-local": run_epr_local,
    "disagreement": run_disagreement,
    "no-signaling": run_no_signaling,
    "continuity": run_continuity,
    "appendix": run_appendix,
}


def run_scenario(cfg: ExperimentConfig, out_dir, workers=None) -> Outcome:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return RUNNERS[cfg.scenario](cfg, _Writer(out_dir, cfg.outputs.formats), workers)


# --- rasters --------------------------------------------------------------------

def raster_state(cfg: ExperimentConfig):
    """(state at t=0, potential, owned DOF) for the configuration-space scenarios."""
    model = cfg.model
    if cfg.scenario == "appendix":
        raise ConfigError("the appendix scenario has no configuration-space state to rasterize")
    if cfg.scenario in ("epr-nonlocal", "epr-local", "disagreement"):
        state, _, partition, _ = _epr_setup(cfg, kind=SHARED if cfg.scenario == "disagreement" else None)
        return state, zero_potential(), partition.A + partition.B
    state = build_state(model)
    if cfg.scenario == "born":
        mc = model.measurement
        pointer = model.terms[0].packets[mc.pointer_dof]
        mm = MeasurementModel(mc.pointer_dof, tuple(mc.eigenvalues), mc.coupling, mc.duration, mc.factor,
                              {"center": pointer.center, "width": pointer.width}, mc.destroy)
        return apply_measurement(state, mm), build_potential(model), (mc.pointer_dof,)
    return state, build_potential(model), _owned(model, state)


def write_rasters(cfg: ExperimentConfig, out_dir, workers=None) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state, potential, owned = raster_state(cfg)
    dt = cfg.numerics.dt or 0.01
    files = []
    for t in sorted(cfg.outputs.raster_times):
        if t < 0:
            raise ConfigError("outputs.raster_times must be non-negative")
        steps = int(round(t / dt))
        s = evolve(state, potential, t / steps, steps, workers=workers) if steps else state
        tag = f"t{t:g}"
        dens_name, vel_name = f"density_{tag}.csv", f"velocity_{tag}.csv"
        write_density_csv(out_dir / dens_name, marginal_density(s, owned))
        write_velocity_raster(out_dir / vel_name, velocity_field(s, VelocityFieldSpec(owned)))
        files += [dens_name, vel_name]
    return files
