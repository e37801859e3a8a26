import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from coupled_meanfield.errors import DimensionMismatch, ProbeNotLipschitz, SizeCapExceeded, UnsupportedWeights
from coupled_meanfield.meanfield import WeightedPointCloud
from coupled_meanfield import transport as T

from oracles import brute_force_w1


def cloud(pts, w=None):
    pts = np.asarray(pts, dtype=float)
    pts = pts.reshape(len(pts), -1)
    return WeightedPointCloud.empirical(pts) if w is None else WeightedPointCloud(pts, w)


def test_sorted_examples():
    assert T.w1_sorted_1d(cloud([0.0]), cloud([1.0])).value == 1.0
    a = cloud([0.3, -0.2, 0.9])
    assert T.w1_sorted_1d(a, a).value == 0.0
    assert T.w1_sorted_1d(cloud([0.0, 1.0]), cloud([1.0, 2.0])).value == pytest.approx(1.0, abs=1e-15)


def test_sorted_weighted_unequal_sizes():
    a = cloud([0.0, 1.0], [0.25, 0.75])
    b = cloud([0.5])
    assert T.w1_sorted_1d(a, b).value == pytest.approx(0.5)


def test_sorted_rejects_2d():
    with pytest.raises(DimensionMismatch):
        T.w1_sorted_1d(cloud([[0, 0]]), cloud([[1, 1]]))


def test_assignment_examples():
    a = cloud([[0.1, 0.2], [0.5, -0.3], [1.0, 0.0]])
    res = T.w1_assignment(a, a)
    assert res.value == 0.0
    assert np.array_equal(res.certificate, [0, 1, 2])
    res = T.w1_assignment(cloud([[0, 0], [1, 0]]), cloud([[0, 1], [1, 1]]))
    assert res.value == pytest.approx(1.0, abs=1e-15)


def test_assignment_matches_brute_force(rng):
    for _ in range(20):
        m = int(rng.integers(1, 7))
        a, b = rng.normal(size=(m, 2)), rng.normal(size=(m, 2))
        assert T.w1_assignment(cloud(a), cloud(b)).value == pytest.approx(brute_force_w1(a, b), abs=1e-12)


def test_assignment_matches_scipy(rng):
    for m in (10, 57, 200):
        a, b = rng.normal(size=(m, 3)), rng.normal(size=(m, 3))
        cost = T.distance_matrix(a, b)
        r, c = linear_sum_assignment(cost)
        assert T.w1_assignment(cloud(a), cloud(b)).value == pytest.approx(cost[r, c].mean(), rel=1e-12)


def test_assignment_is_deterministic_on_ties():
    a = cloud([[0.0], [0.0], [0.0]])
    b = cloud([[1.0], [1.0], [1.0]])
    p1 = T.w1_assignment(a, b).certificate
    p2 = T.w1_assignment(a, b).certificate
    assert np.array_equal(p1, p2)


def test_assignment_errors():
    with pytest.raises(UnsupportedWeights):
        T.w1_assignment(cloud([0.0, 1.0]), cloud([0.0]))
    with pytest.raises(UnsupportedWeights):
        T.w1_assignment(cloud([0.0, 1.0], [0.3, 0.7]), cloud([0.0, 1.0]))
    with pytest.raises(DimensionMismatch):
        T.w1_assignment(cloud([[0.0, 1.0]]), cloud([0.0]))
    with pytest.raises(SizeCapExceeded):
        T.w1_assignment(cloud(np.zeros(5)), cloud(np.ones(5)), cap=4)


def test_dual_examples(rng):
    probe = T.projection_probe([1.0])
    assert T.w1_dual_lower_bound(cloud([0.0]), cloud([1.0]), [probe]).value == 1.0
    a = cloud([0.2, 0.4])
    assert T.w1_dual_lower_bound(a, a, T.default_probes(a, a, rng)).value == 0.0


def test_dual_never_exceeds_exact(rng):
    for _ in range(100):
        dim = int(rng.integers(1, 4))
        m = int(rng.integers(1, 20))
        a, b = cloud(rng.normal(size=(m, dim))), cloud(rng.normal(size=(m, dim)))
        bound = T.w1_dual_lower_bound(a, b, T.default_probes(a, b, rng)).value
        assert bound <= T.w1_assignment(a, b).value + 1e-12


def test_cdf_gap_probe_is_tight_in_1d(rng):
    a, b = cloud(rng.normal(size=17)), cloud(rng.normal(size=9), rng.dirichlet(np.ones(9)))
    dual = T.w1_dual_lower_bound(a, b, [T.cdf_gap_probe(a, b)]).value
    assert dual == pytest.approx(T.w1_sorted_1d(a, b).value, rel=1e-12, abs=1e-14)


def test_non_lipschitz_probe_rejected():
    with pytest.raises(ProbeNotLipschitz):
        T.w1_dual_lower_bound(cloud([0.0, 1.0]), cloud([2.0]), [lambda X: 2.0 * X[:, 0]])


def test_lipschitz_pairing_bound(rng):
    for _ in range(30):
        a, b = cloud(rng.normal(size=(8, 2))), cloud(rng.normal(size=(8, 2)))
        phi = lambda X: np.sin(3 * X[:, 0]) + X[:, 1] ** 2
        support = np.concatenate([a.points, b.points])
        L = T.check_lipschitz(phi, support)
        gap = abs(a.integrate(phi) - b.integrate(phi))
        assert gap <= L * T.w1_assignment(a, b).value + 1e-10
