import numpy as np
import pytest
from scipy import stats

from coupled_meanfield import constraints as C, forces as F
from coupled_meanfield import meanfield as MF
from coupled_meanfield import particles as P


def _particle_state(rng, model, n):
    return P.SystemState(0.0, rng.uniform(-1, 1, model.dim_y), rng.normal(size=model.dim_y),
                         rng.uniform(-1, 1, (n, model.dim_x)))


def test_two_point_shift_mass():
    cloud = MF.WeightedPointCloud([[0.3], [-0.8]], [0.25, 0.75])
    mass = MF.mean_field_mass(C.shift(1.0, "tanh"), F.harmonic(), cloud, [0.0])
    assert mass[0, 0] == pytest.approx(2.0, rel=1e-15)


def test_linear_mass_ignores_cloud(rng):
    B = np.array([[0.5, 1.0]])
    cloud = MF.WeightedPointCloud.empirical(rng.normal(size=(5, 1)))
    mass = MF.mean_field_mass(C.linear(B), F.harmonic(mass=2.0), cloud, [0.1, 0.2])
    assert np.allclose(mass, np.eye(2) + 2.0 * B.T @ B, atol=1e-14)


def test_empirical_cloud_matches_particle_system(rng):
    model, field = C.warped(0.5, [[1.0, 0.3], [0.4, -1.0]], "tanh", 2, 2), F.soft(1.5, 2.0, 1.0)
    s = _particle_state(rng, model, 9)
    cloud = MF.WeightedPointCloud.empirical(s.particles)
    eff = P.assemble_effective(model, field, s)
    assert np.array_equal(MF.mean_field_mass(model, field, cloud, s.y), eff.m_eff)
    assert np.array_equal(MF.mean_field_force(model, field, cloud, s.y, s.v), eff.f_eff)
    fs = MF.FlowState.start(cloud, s.y, s.v)
    for a, b in zip(MF.flow_rhs(model, field, fs), P.rhs(model, field, s)):
        assert np.allclose(a, b, rtol=0, atol=1e-15)
    assert MF.mean_field_energy(model, field, fs) == pytest.approx(P.total_energy(model, field, s), rel=1e-15)


def test_zero_velocity_without_particle_force():
    model = C.warped(0.5, 1.0, "tanh")
    field = F.make_field("harmonic", k1=0.0)
    cloud = MF.WeightedPointCloud.empirical([[0.2], [0.7]])
    assert MF.mean_field_force(model, field, cloud, [0.4], [0.0])[0] == pytest.approx(-0.4)
    fs = MF.FlowState.start(cloud, [0.4], [0.0])
    assert np.all(MF.flow_rhs(model, field, fs)[2] == 0.0)


def test_energy_zero_at_rest():
    fs = MF.FlowState.start(MF.WeightedPointCloud.empirical([[0.0], [0.0]]), [0.0], [0.0])
    assert MF.mean_field_energy(C.shift(), F.harmonic(), fs) == 0.0


def test_flow_reproduces_particles_and_keeps_weights(rng):
    model, field = C.warped(0.5, 1.0, "tanh"), F.soft(1.0, 2.0, 2.0)
    s = _particle_state(rng, model, 12)
    tp = P.integrate(model, field, s, 2.0, 1e-2, stride=5)
    tf = MF.integrate_flow(model, field, MF.FlowState.start(MF.WeightedPointCloud.empirical(s.particles), s.y, s.v),
                           2.0, 1e-2, stride=5)
    assert np.max(np.abs(tf.nodes - tp.particles)) <= 1e-12
    assert np.max(np.abs(tf.y - tp.y)) <= 1e-12
    assert np.all(tf.weights == 1 / 12)
    for k in range(len(tf)):
        assert tf.cloud(k).weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_T_zero_flow():
    cloud = MF.WeightedPointCloud.empirical([[0.1], [0.5]])
    tr = MF.integrate_flow(C.shift(), F.soft(), MF.FlowState.start(cloud, [0.2], [1.0]), 0.0, 1e-2)
    assert len(tr) == 1
    assert np.array_equal(tr.nodes[0], cloud.points)


def _flow(v0=1.0):
    model, field = C.warped(0.5, 1.0, "tanh"), F.soft()
    cloud = MF.quantile_cloud(MF.Distribution("uniform"), 32)
    return model, MF.integrate_flow(model, field, MF.FlowState.start(cloud, [0.2], [v0]), 1.0, 1e-3)


def test_weak_form_constant_test_function():
    model, tr = _flow()
    one = lambda X: np.ones(len(np.atleast_2d(X)))
    zero = lambda X: np.zeros_like(np.atleast_2d(X))
    assert MF.weak_form_residual(model, tr, one, 0.5, 0.01, grad=zero) <= 1e-13


def test_weak_form_at_rest():
    model = C.warped(0.5, 1.0, "tanh")
    field = F.make_field("harmonic", k0=0.0, k1=0.0)
    cloud = MF.quantile_cloud(MF.Distribution("uniform"), 16)
    tr = MF.integrate_flow(model, field, MF.FlowState.start(cloud, [0.2], [0.0]), 1.0, 1e-2)
    bump = MF.Bump(np.array([0.1]), 0.8)
    assert MF.weak_form_residual(model, tr, bump, 0.5, 0.1) <= 1e-15


def test_weak_form_second_order():
    model, tr = _flow()
    bump = MF.Bump(np.array([0.0]), 1.2)
    res = [MF.weak_form_residual(model, tr, bump, 0.5, h) for h in (0.08, 0.04, 0.02)]
    slopes = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(slopes > 1.8)


def test_weak_form_requires_grid_times():
    model, tr = _flow()
    with pytest.raises(ValueError):
        MF.weak_form_residual(model, tr, MF.Bump(np.array([0.0]), 1.0), 0.5, 0.0005)


def test_bump_gradient_matches_finite_difference(rng):
    bump = MF.Bump(np.array([0.2, -0.1]), 0.9)
    X = rng.uniform(-0.6, 0.6, (20, 2))
    h = 1e-6
    fd = np.stack([(bump(X + h * e) - bump(X - h * e)) / (2 * h) for e in np.eye(2)], axis=1)
    assert np.allclose(bump.grad(X), fd, atol=1e-8)
    assert bump(np.array([[0.2, -0.1]]))[0] == 1.0
    assert bump(np.array([[1.2, -0.1]]))[0] == 0.0


def test_cloud_validation():
    with pytest.raises(ValueError):
        MF.WeightedPointCloud([[0.0], [1.0]], [0.5, 0.6])
    with pytest.raises(ValueError):
        MF.WeightedPointCloud([[0.0], [1.0]], [1.5, -0.5])
    c = MF.WeightedPointCloud.empirical([[0.0], [2.0]])
    assert c.first_moment == pytest.approx(2.0)
    with pytest.raises(ValueError):
        c.points[0, 0] = 1.0


def test_distributions_against_scipy():
    u = np.linspace(0.01, 0.99, 25)[:, None]
    d = MF.Distribution("truncnormal", low=-1, high=2, mean=0.3, std=0.7)
    ref = stats.truncnorm(-1.3 / 0.7, 1.7 / 0.7, loc=0.3, scale=0.7)
    assert np.allclose(d.ppf(u)[:, 0], ref.ppf(u[:, 0]), atol=1e-12)
    x = np.linspace(-1, 2, 13)[:, None]
    assert np.allclose(d.cdf(x)[:, 0], ref.cdf(x[:, 0]), atol=1e-12)
    assert np.allclose(d.cdf(d.ppf(u)), u, atol=1e-10)
    uni = MF.Distribution("uniform", low=-1, high=3)
    assert np.allclose(uni.ppf(u), -1 + 4 * u)
    with pytest.raises(ValueError):
        MF.Distribution("cauchy")


def test_quantile_cloud_nodes():
    c = MF.quantile_cloud(MF.Distribution("uniform"), 4)
    assert np.allclose(c.points[:, 0], [-0.75, -0.25, 0.25, 0.75])
    grid = MF.quantile_cloud(MF.Distribution("uniform", dim=2), 3)
    assert grid.size == 9 and grid.dim == 2
    delta = MF.quantile_cloud(MF.Distribution("delta", point=0.4), 5)
    assert np.all(delta.points == 0.4)


def test_iid_cloud_reproducible():
    d = MF.Distribution("uniform")
    a = MF.iid_cloud(d, 10, np.random.default_rng(3))
    b = MF.iid_cloud(d, 10, np.random.default_rng(3))
    assert np.array_equal(a.points, b.points)
    assert np.all((a.points >= -1) & (a.points <= 1))
