import math

import numpy as np
import pytest

from coupled_meanfield import config as cfgmod, experiments as E

from oracles import linear_harmonic_stability_lhs


def test_fit_envelope_recovers_exact_exponential():
    t = np.linspace(0, 4, 9)
    C, L = E.fit_envelope(t, 1.7 * np.exp(0.3 * t))
    assert C == pytest.approx(1.7, rel=1e-10)
    assert L == pytest.approx(0.3, rel=1e-10)


def test_fit_envelope_lies_above_data(rng):
    for _ in range(20):
        t = np.sort(rng.uniform(0, 5, 12))
        r = np.exp(0.2 * t + 0.3 * rng.normal(size=12))
        C, L = E.fit_envelope(t, r)
        assert np.all(C * np.exp(L * t) >= r * (1 - 1e-10))


def test_fit_envelope_degenerate_inputs():
    assert E.fit_envelope([], []) == (1.0, 0.0)
    assert E.fit_envelope([1.0], [2.0]) == (2.0, 0.0)


def _linear_stability_cfg():
    cfg = cfgmod.packaged_config("linear_oscillator")
    cfg.initial.N = 32
    cfg.initial.sampling = "quantile"
    cfg.stability.T = 5.0
    cfg.stability.n_times = 50
    cfg.stability.dy, cfg.stability.dv, cfg.stability.shift = [0.004], [0.003], [0.002]
    cfg.integrator.dt = 1e-3
    return cfg


def test_linear_stability_matches_closed_form():
    cfg = _linear_stability_cfg()
    rep = E.run_stability(cfg)
    p = cfg.model.params
    exact = linear_harmonic_stability_lhs(rep.times, p["B"], cfg.field.mass, cfg.field.k0, cfg.field.k1,
                                          0.004, 0.003, 0.002)
    assert rep.lhs == pytest.approx(exact, rel=1e-2)
    assert rep.passed


def test_identical_initial_data_give_zero_lhs():
    cfg = cfgmod.packaged_config("stability")
    rep = E.run_stability(cfg, scale=0.0)
    assert rep.rhs0 == 0.0
    assert np.max(rep.lhs) <= 1e-12
    assert rep.passed


def test_perturbation_scaling_is_linear():
    cfg = cfgmod.packaged_config("stability")
    full, half, quarter = (E.run_stability(cfg, s) for s in (1.0, 0.5, 0.25))
    assert half.lhs == pytest.approx(0.5 * full.lhs, rel=0.1)
    # the quarter-scale run confirms the linear regime
    assert quarter.lhs == pytest.approx(0.5 * half.lhs, rel=0.05)


def test_point_mass_convergence_is_exact():
    cfg = cfgmod.packaged_config("convergence")
    cfg.initial.distribution = "delta"
    cfg.initial.point = [0.3]
    cfg.convergence.n_values = [4, 16]
    cfg.convergence.seeds = 2
    cfg.convergence.m_ref = 64
    cfg.convergence.T = 0.5
    rep = E.run_convergence(cfg, strict_sequential=True)
    assert np.all(rep.w1_init == 0) and np.all(rep.w1_final == 0)
    assert np.all(rep.macro_err == 0)


def test_consistency_single_particle():
    cfg = cfgmod.packaged_config("consistency")
    cfg.initial.N = 1
    cfg.integrator.T = 1.0
    rep = E.run_consistency(cfg)
    assert rep.discrepancy <= 1e-12
    assert rep.trajectory_ok


def test_consistency_rejects_short_runs():
    cfg = cfgmod.packaged_config("consistency")
    cfg.integrator.T = 0.01
    with pytest.raises(ValueError):
        E.run_consistency(cfg)


def test_invariants_meanfield_suite():
    cfg = cfgmod.packaged_config("meanfield_energy")
    cfg.integrator.T = 2.0
    cfg.invariants.energy_tol = 1e-6
    rep = E.run_invariants(cfg)
    assert rep.system == "meanfield"
    assert "dae_newton_x" not in rep.checks
    assert rep.checks["mass_min_eigenvalue"]["passed"]
    assert rep.checks["speed_bound"]["passed"]


def test_parallel_map_preserves_order():
    items = list(range(6))
    assert E.parallel_map(math.sqrt, items) == E.parallel_map(math.sqrt, items, strict_sequential=True)


def test_measure_period_of_sine():
    t = np.linspace(0, 20, 4001)
    period, count = E.measure_period(t, np.sin(2 * np.pi * t / 1.7 + 0.3))
    assert period == pytest.approx(1.7, rel=1e-5)
    assert count >= 10
    with pytest.raises(ValueError):
        E.measure_period(t, np.ones_like(t))
