import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hvlab.dynamics import MeasurementModel, apply_measurement
from hvlab.errors import BadSubset, OverlappingBranches
from hvlab.hilbert import Grid1D, state_from_terms
from hvlab.measurement import (
    Branch,
    BranchSpec,
    born_probabilities,
    branch_frequencies,
    classify,
    classify_ensemble,
    unsupported_mass,
    write_results_csv,
)
from hvlab.trajectories import Ensemble, Walker, sample_initial
from hvlab.velocity import VelocityFieldSpec

GRID = Grid1D.centered(128, 0.25)
SPEC = BranchSpec.from_packets([0], [(0, [6.0]), (1, [-6.0])], 1.0)


def measured(c, grid=GRID):
    s = state_from_terms([grid], [1.0], [(c[0], (0,), [{"center": 0.0, "width": 1.0}]),
                                         (c[1], (1,), [{"center": 0.0, "width": 1.0}])], (2,), normalized=False)
    return apply_measurement(s, MeasurementModel(0, (1.0, -1.0), 6.0, 1.0))


@pytest.mark.parametrize("c", [(1 / np.sqrt(2), 1 / np.sqrt(2)), (1.0, 0.0), (np.sqrt(0.3), np.sqrt(0.7))])
def test_born_probabilities(c):
    s = measured(c)
    p = dict(born_probabilities(s, SPEC))
    assert p[0] == pytest.approx(c[0] ** 2, abs=1e-9)
    assert p[1] == pytest.approx(c[1] ** 2, abs=1e-9)
    total = p[0] + p[1]
    assert 1 - 1e-6 <= total <= 1 + 1e-12
    assert total + unsupported_mass(s, SPEC) == pytest.approx(1.0, abs=1e-6)


def test_born_probabilities_against_explicit_quadrature():
    s = measured((np.sqrt(0.3), np.sqrt(0.7)))
    x = GRID.coords()
    rho = (np.abs(s.amplitudes) ** 2).sum(axis=0)
    oracle = 0.0
    for i in range(GRID.n_points):
        if 1.0 <= x[i] < 11.0:
            oracle += rho[i] * GRID.dx
    assert dict(born_probabilities(s, SPEC))[0] == pytest.approx(oracle, abs=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.95), st.permutations([0, 1]))
def test_born_invariant_under_branch_permutation(w, perm):
    s = measured((np.sqrt(w), np.sqrt(1 - w)))
    branches = [SPEC.branches[i] for i in perm]
    permuted = BranchSpec([0], branches)
    assert dict(born_probabilities(s, permuted)) == dict(born_probabilities(s, SPEC))


def test_overlapping_supports_rejected():
    with pytest.raises(OverlappingBranches):
        BranchSpec.from_packets([0], [(0, [1.0]), (1, [-1.0])], 1.0)
    with pytest.raises(OverlappingBranches):
        BranchSpec([0], [Branch(0, (0.0,), (1.0,)), Branch(0, (2.0,), (3.0,))])
    with pytest.raises(BadSubset):
        BranchSpec([0], [Branch(0, (0.0, 0.0), (1.0, 1.0))])
    # touching boxes are disjoint under the half-open convention
    BranchSpec([0], [Branch(0, (0.0,), (1.0,)), Branch(1, (1.0,), (2.0,))])


def test_two_dimensional_support():
    spec = BranchSpec([0, 1], [Branch("a", (0.0, 0.0), (1.0, 1.0)), Branch("b", (0.0, 1.0), (1.0, 2.0))])
    assert spec.index_of([[0.5, 0.5], [0.5, 1.5], [1.5, 0.5]]).tolist() == [0, 1, -1]


def test_classify_walkers():
    assert classify(Walker(0, np.array([6.0])), SPEC) == 0
    assert classify(Walker(1, np.array([-6.0])), SPEC) == 1
    assert classify(Walker(2, np.array([0.0])), SPEC) is None
    assert classify(Walker(3, np.array([4.0, -6.0])), SPEC, owned_dofs=(1, 0)) == 1
    with pytest.raises(BadSubset):
        classify(Walker(4, np.array([1.0, 2.0])), SPEC)
    with pytest.raises(BadSubset):
        classify(Walker(5, np.array([1.0])), SPEC, owned_dofs=(3,))


def test_equivariant_ensemble_frequencies():
    c = (np.sqrt(0.3), np.sqrt(0.7))
    s = measured(c)
    ens = sample_initial(s, VelocityFieldSpec((0,)), 10000, seed=17)
    freq = branch_frequencies(ens, SPEC)
    n = len(ens)
    for (k, f, se), ck in zip(freq, c):
        assert abs(f - ck**2) < 3 * np.sqrt(ck**2 * (1 - ck**2) / n)
        assert se == pytest.approx(np.sqrt(f * (1 - f) / n))
    unclassified = np.mean(classify_ensemble(ens, SPEC) < 0)
    assert unclassified < 0.005


def test_equal_branch_frequencies():
    s = measured((1 / np.sqrt(2), 1 / np.sqrt(2)))
    ens = sample_initial(s, VelocityFieldSpec((0,)), 10000, seed=18)
    for _, f, se in branch_frequencies(ens, SPEC):
        assert abs(f - 0.5) < 3 * se


def test_degenerate_and_adversarial_ensembles():
    all_one = Ensemble(np.full((100, 1), -6.0), (0,), seed=0)
    assert [(k, f) for k, f, _ in branch_frequencies(all_one, SPEC)] == [(0, 0.0), (1, 1.0)]
    # statistics report what they see, whatever the state
    all_zero = Ensemble(np.full((100, 1), 6.0), (0,), seed=0)
    assert [(k, f) for k, f, _ in branch_frequencies(all_zero, SPEC)] == [(0, 1.0), (1, 0.0)]
    some_out = Ensemble(np.array([[6.0], [0.0], [0.0], [-6.0]]), (0,), seed=0)
    fr = branch_frequencies(some_out, SPEC)
    assert sum(f for _, f, _ in fr) == 0.5


def test_results_csv(tmp_path):
    path = tmp_path / "r.csv"
    write_results_csv(path, [(0, 0.3), (1, 0.7)], [(0, 0.31, 0.01), (1, 0.69, 0.01)], 100)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["k", "p_k", "fraction", "stderr", "n"]
    assert rows[1] == ["0", "0.3", "0.31", "0.01", "100"]
