import json

import numpy as np
import pytest

from hvlab.dynamics import evolve
from hvlab.errors import BadSubset, ConfigError, IndistinguishableBranches
from hvlab.hilbert import Grid1D, HybridState, gaussian_packet, marginal_density, state_from_terms
from hvlab.observers import (
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
from hvlab.trajectories import SchrodingerProvider
from hvlab.velocity import bohmian_velocity

H = 1 / np.sqrt(2)
AB = ObserverPartition.from_lists([0], [1])


def joint_masses(state, geometry=EPRGeometry()):
    rho = marginal_density(state, [0, 1]).cell_masses()
    x = geometry.grid().coords()
    c = geometry.centers()
    sup = {k: np.abs(x - c[k]) <= 5 * geometry.width for k in (UP, DOWN)}
    return {(a, b): float(rho[np.ix_(sup[a], sup[b])].sum()) for a in (UP, DOWN) for b in (UP, DOWN)}


def test_anticorrelated_pairing():
    m = joint_masses(build_epr_state(ANTICORRELATED, [H, H]))
    assert m[(UP, DOWN)] == pytest.approx(0.5, abs=1e-9)
    assert m[(DOWN, UP)] == pytest.approx(0.5, abs=1e-9)
    assert m[(UP, UP)] < 1e-8 and m[(DOWN, DOWN)] < 1e-8


def test_shared_superposition():
    m = joint_masses(build_epr_state(SHARED, [1.0, 0.0]))
    assert m[(UP, UP)] == pytest.approx(1.0, abs=1e-9)
    m = joint_masses(build_epr_state(SHARED, [H, H]))
    assert m[(UP, UP)] == pytest.approx(0.5, abs=1e-9)
    assert m[(DOWN, DOWN)] == pytest.approx(0.5, abs=1e-9)
    assert m[(UP, DOWN)] < 1e-8 and m[(DOWN, UP)] < 1e-8


def test_build_epr_state_errors():
    with pytest.raises(ConfigError):
        build_epr_state(ANTICORRELATED, [1.0, 0.0, 0.0])
    with pytest.raises(ConfigError):
        build_epr_state(ANTICORRELATED, [1.0, 1.0])
    with pytest.raises(ConfigError):
        build_epr_state("ghz", [H, H])
    with pytest.raises(IndistinguishableBranches):
        build_epr_state(ANTICORRELATED, [H, H], EPRGeometry(separation=4.0))
    build_epr_state(ANTICORRELATED, [H, H], EPRGeometry(separation=4.0), overlap_eps=np.inf)


def test_partition_validation():
    assert AB.n_A == AB.n_B == 1
    with pytest.raises(BadSubset):
        ObserverPartition.from_lists([0], [0])
    with pytest.raises(BadSubset):
        ObserverPartition.from_lists([0], [])
    with pytest.raises(ConfigError):
        ObserverPartition({0: "A", 1: "C"})
    p = ObserverPartition.from_lists([0, 2], [1], environment=[3])
    assert p.A == (0, 2) and p.B == (1,) and p.dofs("environment") == (3,)


def _moving_product():
    g = Grid1D.centered(64, 0.25)
    phi = gaussian_packet(g, 0.5, 1.0, 0.8) + 0.4 * gaussian_packet(g, -1.0, 1.0, -0.6)
    chi = gaussian_packet(g, -0.5, 1.1, 0.3)
    return HybridState((), (g, g), np.multiply.outer(phi, chi), (1.0, 1.0))


def test_joint_equals_bohmian_on_full_subset():
    s = _moving_product()
    for p in ([0.1, -0.3], [1.0, 0.2], [-0.7, -1.1]):
        np.testing.assert_allclose(joint_velocity(s, AB, p).velocity, bohmian_velocity(s, p).velocity,
                                   rtol=0, atol=1e-12)


def test_product_state_laws_agree_and_factorize():
    s = _moving_product()
    base = joint_velocity(s, AB, [0.2, 0.0]).velocity[0]
    for xb in np.linspace(-1.5, 1.0, 6):
        va = joint_velocity(s, AB, [0.2, xb]).velocity
        assert va[0] == pytest.approx(base, abs=1e-10)
        la, lb = local_velocities(s, AB, [0.2], [xb])
        assert la.velocity[0] == pytest.approx(va[0], abs=1e-10)
        assert lb.velocity[0] == pytest.approx(va[1], abs=1e-10)


def test_local_law_is_local_exactly():
    s = evolve(build_epr_state(ANTICORRELATED, [H, H]), None, 0.05, 10)
    c = EPRGeometry().centers()
    values = set()
    for xb in np.concatenate([np.linspace(c[DOWN] - 1, c[DOWN] + 1, 5), np.linspace(c[UP] - 1, c[UP] + 1, 5)]):
        va, _ = local_velocities(s, AB, [c[UP] + 0.7], [xb])
        values.add(va.velocity.tobytes())
    assert len(values) == 1


def test_joint_law_nonlocality_witness():
    geom = EPRGeometry(separation=3.0)
    s = evolve(build_epr_state(ANTICORRELATED, [H, H], geom, overlap_eps=np.inf), None, 0.05, 20)
    c = geom.centers()
    v1 = joint_velocity(s, AB, [0.75, c[DOWN]]).velocity[0]
    v2 = joint_velocity(s, AB, [0.75, c[UP]]).velocity[0]
    assert abs(v1 - v2) > 1e-3
    # the local law cannot see the move
    l1, _ = local_velocities(s, AB, [0.75], [c[DOWN]])
    l2, _ = local_velocities(s, AB, [0.75], [c[UP]])
    assert l1.velocity[0] == l2.velocity[0]


def test_local_velocity_matches_quadrature_on_epr_like_state():
    g = Grid1D.centered(128, 0.25)
    # anticorrelated pairing with moving pointer packets (analytic components)
    pa = {UP: (6.0, 0.7), DOWN: (-6.0, -0.4)}
    pb = {UP: (6.0, -0.2), DOWN: (-6.0, 0.5)}
    terms = [(H, (0, 1), [{"center": pa[UP][0], "width": 1.0, "momentum": pa[UP][1]},
                          {"center": pb[DOWN][0], "width": 1.0, "momentum": pb[DOWN][1]}]),
             (H, (1, 0), [{"center": pa[DOWN][0], "width": 1.0, "momentum": pa[DOWN][1]},
                          {"center": pb[UP][0], "width": 1.0, "momentum": pb[UP][1]}])]
    s = state_from_terms([g, g], [1.0, 1.0], terms, (2, 2))
    xb = g.coords()
    n = np.pi ** -0.5
    for xa in (4.3, 5.1, 6.6, 7.2, -4.8, -6.2, -7.0):
        num = den = 0.0
        for (ca, pa_), (cb, pb_) in ((pa[UP], pb[DOWN]), (pa[DOWN], pb[UP])):
            fa = np.exp(-((xa - ca) ** 2) / 2 + 1j * pa_ * xa)
            dfa = (-(xa - ca) + 1j * pa_) * fa
            for x in xb:
                fb = np.exp(-((x - cb) ** 2) / 2 + 1j * pb_ * x)
                psi, dpsi = H * n * fa * fb, H * n * dfa * fb
                num += np.imag(np.conj(psi) * dpsi) * g.dx
                den += abs(psi) ** 2 * g.dx
        va, _ = local_velocities(s, AB, [xa], [6.0], interpolation="spectral")
        assert va.velocity[0] == pytest.approx(num / den, rel=1e-8)


def test_disagreement_experiment_equal_amplitudes():
    geom = EPRGeometry()
    s = build_epr_state(SHARED, [H, H], geom)
    res = run_disagreement_experiment(s, AB, geom.branch_spec(0), geom.branch_spec(1), 10000, seed=5)
    assert abs(res.disagreement_rate - 0.5) < 3 * 0.005
    assert res.n_classified + res.unclassified == 10000
    assert res.law == "local"


def test_disagreement_experiment_single_branch():
    geom = EPRGeometry()
    s = build_epr_state(SHARED, [1.0, 0.0], geom)
    res = run_disagreement_experiment(s, AB, geom.branch_spec(0), geom.branch_spec(1), 2000, seed=5)
    assert res.disagreement_rate == 0.0


def test_joint_experiment_cross_branch_and_born_tables():
    geom = EPRGeometry()
    s = build_epr_state(ANTICORRELATED, [H, H], geom)
    provider = SchrodingerProvider(s, None, 0.025)
    joint = run_joint_experiment(s, AB, geom.branch_spec(0), geom.branch_spec(1), 10000, 8, provider, 0.05, 10)
    allowed = joint.fraction([(UP, DOWN), (DOWN, UP)])
    assert 1 - allowed < 0.01
    local = run_disagreement_experiment(s, AB, geom.branch_spec(0), geom.branch_spec(1), 10000, 8,
                                        provider, 0.05, 10)
    for law in (joint, local):
        for obs in ("A", "B"):
            for k, p, f, se in law.born_tables[obs]:
                assert p == pytest.approx(0.5, abs=1e-6)
                assert abs(f - 0.5) < 3 * np.sqrt(0.25 / 10000)


def test_zero_cross_branch_joint_density():
    geom = EPRGeometry()
    m = joint_masses(evolve(build_epr_state(ANTICORRELATED, [H, H], geom), None, 0.05, 10), geom)
    assert m[(UP, UP)] < 1e-6


def test_scenario_result_json(tmp_path):
    geom = EPRGeometry()
    s = build_epr_state(SHARED, [H, H], geom)
    res = run_joint_experiment(s, AB, geom.branch_spec(0), geom.branch_spec(1), 500, seed=1)
    path = tmp_path / "r.json"
    res.write_json(path)
    data = json.loads(path.read_text())
    assert data["law"] == "joint"
    assert np.sum(data["joint_branch_counts"]) + data["unclassified"] == 500
    assert set(data["born_tables"]) == {"A", "B"}
