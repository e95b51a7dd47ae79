import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hvlab.errors import BadSubset, ConfigError, ShapeMismatch, ZeroState
from hvlab.hilbert import (
    DensityGrid,
    Grid1D,
    HybridState,
    boundary_mass,
    gaussian_packet,
    marginal_density,
    normalize,
    packet_overlap,
    state_from_terms,
    write_density_csv,
)


def random_state(rng, dims=(), shape=(16, 12), dx=(0.5, 0.4)):
    grids = tuple(Grid1D.centered(n, d) for n, d in zip(shape, dx))
    psi = rng.normal(size=tuple(dims) + shape) + 1j * rng.normal(size=tuple(dims) + shape)
    return normalize(HybridState(tuple(dims), grids, psi, (1.0,) * len(shape)))


def test_grid_validation():
    with pytest.raises(ConfigError):
        Grid1D(4, 0.1)
    with pytest.raises(ConfigError):
        Grid1D(16, 0.0)
    g = Grid1D(16, 0.25, x0=-2.0)
    assert g.length == 4.0
    assert g.is_pow2
    assert not Grid1D(24, 0.25).is_pow2
    np.testing.assert_allclose(g.coords(), -2.0 + 0.25 * np.arange(16))


def test_grid_wrap_and_contains():
    g = Grid1D.centered(16, 0.25)
    assert g.lower == pytest.approx(-2.125)
    assert g.upper == pytest.approx(1.875)
    assert g.wrap(2.0) == pytest.approx(-2.0)
    assert g.contains(np.array([0.0, 1.9]))[0]
    assert not g.contains(np.array([1.9]))[0]


def test_state_shape_mismatch():
    g = Grid1D(16, 0.25)
    with pytest.raises(ShapeMismatch):
        HybridState((2,), (g,), np.ones((3, 16)), (1.0,))
    with pytest.raises(ConfigError):
        HybridState((), (g,), np.ones(16), (1.0, 1.0))


def test_state_is_read_only():
    g = Grid1D(16, 0.25)
    s = HybridState((), (g,), np.ones(16, complex), (1.0,))
    with pytest.raises(ValueError):
        s.amplitudes[0] = 2.0


def test_normalize_uniform():
    g = Grid1D(16, 0.25)
    s = normalize(HybridState((), (g,), np.full(16, 2.0 + 0j), (1.0,)))
    # sum |psi|^2 dx = 16 * a^2 * 0.25 = 1  ->  a = 0.5
    np.testing.assert_allclose(s.amplitudes, 0.5, rtol=0, atol=1e-15)


def test_normalize_idempotent_on_gaussian():
    g = Grid1D.centered(128, 0.1)
    s = HybridState((), (g,), gaussian_packet(g, 0.3, 0.8, 1.2), (1.0,))
    assert s.norm() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(normalize(s).amplitudes, s.amplitudes, atol=1e-12)


def test_normalize_random_against_quadrature():
    rng = np.random.default_rng(0)
    s = random_state(rng, dims=(3,))
    total = 0.0
    for v in s.amplitudes.ravel():
        total += abs(v) ** 2
    assert total * 0.5 * 0.4 == pytest.approx(1.0, abs=1e-12)


def test_normalize_zero_state():
    g = Grid1D(16, 0.25)
    with pytest.raises(ZeroState):
        normalize(HybridState((), (g,), np.zeros(16), (1.0,)))


def test_marginal_of_product_state():
    g1, g2 = Grid1D.centered(64, 0.25), Grid1D.centered(32, 0.5)
    phi = gaussian_packet(g1, 1.0, 1.0, 0.5)
    chi = gaussian_packet(g2, -2.0, 1.3)
    s = HybridState((), (g1, g2), np.multiply.outer(phi, chi), (1.0, 1.0))
    np.testing.assert_allclose(marginal_density(s, [0]).values, np.abs(phi) ** 2, atol=1e-12)
    np.testing.assert_allclose(marginal_density(s, [1]).values, np.abs(chi) ** 2, atol=1e-12)


def test_marginal_two_branch_pointer():
    g = Grid1D.centered(128, 0.25)
    c = 1 / np.sqrt(2)
    s = state_from_terms([g], [1.0], [(c, (0,), [{"center": -6.0, "width": 1.0}]),
                                      (c, (1,), [{"center": 6.0, "width": 1.0}])], (2,))
    rho = marginal_density(s, [0])
    x = g.coords()
    assert rho.values[x < 0].sum() * g.dx == pytest.approx(0.5, abs=1e-9)
    assert rho.values[x > 0].sum() * g.dx == pytest.approx(0.5, abs=1e-9)
    assert rho.integral() == pytest.approx(1.0, abs=1e-8)


def test_marginal_matches_double_loop():
    rng = np.random.default_rng(1)
    s = random_state(rng, dims=(2,), shape=(10, 8), dx=(0.5, 0.25))
    rho = marginal_density(s, [0]).values
    oracle = np.zeros(10)
    for k in range(2):
        for i in range(10):
            for j in range(8):
                oracle[i] += abs(s.amplitudes[k, i, j]) ** 2 * 0.25
    np.testing.assert_allclose(rho, oracle, rtol=0, atol=1e-10)


def test_marginal_subset_order_and_full():
    rng = np.random.default_rng(2)
    s = random_state(rng, dims=(2,), shape=(8, 10))
    full = marginal_density(s, [0, 1]).values
    np.testing.assert_allclose(full, (np.abs(s.amplitudes) ** 2).sum(axis=0), atol=1e-12)
    np.testing.assert_allclose(marginal_density(s, [1, 0]).values, full.T, atol=1e-15)


def test_marginal_bad_subset():
    s = random_state(np.random.default_rng(3))
    for bad in ([], [0, 0], [2], [-1]):
        with pytest.raises(BadSubset):
            marginal_density(s, bad)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 2 * np.pi))
def test_marginal_tower_and_global_phase(seed, theta):
    s = random_state(np.random.default_rng(seed), dims=(2,))
    rho0 = marginal_density(s, [0])
    assert rho0.integral() == pytest.approx(1.0, abs=1e-8)
    assert marginal_density(s, [1]).integral() == pytest.approx(1.0, abs=1e-8)
    rotated = s.with_amplitudes(s.amplitudes * np.exp(1j * theta))
    np.testing.assert_allclose(marginal_density(rotated, [0]).values, rho0.values, rtol=1e-14, atol=0)


def test_packet_overlap_self_and_separated():
    g = Grid1D.centered(256, 0.1)
    a = HybridState((), (g,), gaussian_packet(g, -6.0, 1.0), (1.0,))
    b = HybridState((), (g,), gaussian_packet(g, 6.0, 1.0), (1.0,))
    assert packet_overlap(a, a) == pytest.approx(1.0, abs=1e-12)
    ov = packet_overlap(a, b)
    assert ov < 1e-8
    assert ov == pytest.approx(np.exp(-144 / 4), rel=1e-6)


def test_packet_overlap_matches_analytic_gaussian():
    g = Grid1D.centered(512, 0.05)
    for d in (0.5, 1.0, 2.0, 3.0):
        a = HybridState((), (g,), gaussian_packet(g, -d / 2, 1.0), (1.0,))
        b = HybridState((), (g,), gaussian_packet(g, d / 2, 1.0), (1.0,))
        assert packet_overlap(a, b) == pytest.approx(np.exp(-d**2 / 4), rel=1e-10)


def test_packet_overlap_disjoint_indicators():
    g = Grid1D(16, 0.5)
    a = np.zeros(16)
    b = np.zeros(16)
    a[:4], b[8:12] = 1.0, 1.0
    sa = normalize(HybridState((), (g,), a, (1.0,)))
    sb = normalize(HybridState((), (g,), b, (1.0,)))
    assert packet_overlap(sa, sb) == 0.0


def test_packet_overlap_shape_mismatch():
    g, h = Grid1D(16, 0.5), Grid1D(32, 0.5)
    with pytest.raises(ShapeMismatch):
        packet_overlap(HybridState((), (g,), np.ones(16), (1.0,)),
                       HybridState((), (h,), np.ones(32), (1.0,)))


def test_gaussian_packet_moments():
    g = Grid1D.centered(1024, 0.05)
    phi = gaussian_packet(g, 1.5, 0.7, momentum=2.0)
    x = g.coords()
    rho = np.abs(phi) ** 2
    assert rho.sum() * g.dx == pytest.approx(1.0, abs=1e-12)
    assert (x * rho).sum() * g.dx == pytest.approx(1.5, abs=1e-12)
    # position variance is width^2 / 2
    assert ((x - 1.5) ** 2 * rho).sum() * g.dx == pytest.approx(0.7**2 / 2, rel=1e-10)
    # (hbar = 1) the phase of each sample is momentum * x
    near = np.abs(x - 1.5) < 10
    np.testing.assert_allclose(np.angle(phi * np.exp(-2j * x))[near], 0.0, atol=1e-12)


def test_boundary_mass_and_warning(caplog):
    g = Grid1D.centered(64, 0.25)
    centred = HybridState((), (g,), gaussian_packet(g, 0.0, 1.0), (1.0,))
    assert boundary_mass(centred) < 1e-12
    edge = HybridState((), (g,), gaussian_packet(g, 7.5, 1.0), (1.0,))
    assert boundary_mass(edge) > 1e-3


def test_state_from_terms_labels_and_normalization():
    g = Grid1D.centered(64, 0.25)
    terms = [(2.0, (0, 1), [{"center": 0.0, "width": 1.0}]), (1j, (1, 0), [gaussian_packet(g, 1.0, 1.0)])]
    s = state_from_terms([g], [1.0], terms, (2, 2))
    assert s.norm() == pytest.approx(1.0)
    w = (np.abs(s.amplitudes) ** 2).sum(axis=-1) * g.dx
    assert w[0, 1] == pytest.approx(0.8, abs=1e-12)
    assert w[1, 0] == pytest.approx(0.2, abs=1e-12)
    assert w[0, 0] == w[1, 1] == 0.0


def test_density_csv(tmp_path):
    g1, g2 = Grid1D(8, 0.5), Grid1D(8, 1.0)
    vals = np.arange(64, dtype=float).reshape(8, 8) / 1000
    path = tmp_path / "d.csv"
    write_density_csv(path, DensityGrid((0, 1), vals, (g1, g2)))
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x0", "x1", "density"]
    assert len(rows) == 65
    assert [float(v) for v in rows[10]] == [0.5, 1.0, vals[1, 1]]
