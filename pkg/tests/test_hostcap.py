import logging
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import study_for, twobus_exact
from pvhostcap import hostcap
from pvhostcap.errors import AllUnboundedError, BracketError, ConfigError, NoHeadroomError
from pvhostcap.hostcap import (
    HcSampleSet,
    bisect_fixed_power,
    box_stats,
    deterministic_capacity,
    eps_hat,
    error_metric,
    estimate_phi_eps,
    max_gen_fixed_voltage,
    predicted_load_voltages,
    run_fixed_power,
    run_fixed_voltage,
    run_fixed_voltage_on,
    sweep_penetration,
)
from pvhostcap.loadflow import MagnitudeModel
from pvhostcap.scenarios import IndicatorVector, Scenario, ScenarioSet, draw_scenarios

V_PLUS = 1.10


def toy_model(G, v_bar):
    """MagnitudeModel whose load block is ``G`` with one load per node, no slack coupling."""
    G = np.asarray(G, float)
    n = G.shape[0]
    F = np.zeros((n + 3, 2 * n))
    F[3:, :n] = G
    v = np.concatenate([np.ones(3), v_bar])
    return MagnitudeModel(
        F=F, g=v.copy(), theta_bar=np.zeros(n + 3), v_bar_mag=v,
        p_bar=np.zeros(n), q_bar=np.zeros(n), load_rows=np.arange(3, n + 3),
    )


def samples_of(values, n_gen=4):
    values = np.asarray(values, float)
    return HcSampleSet(p_gen_max=values, n_gen=n_gen, n_lds=10)


def shared_set(study, n_gen, n_mc=1000, seed=1):
    return draw_scenarios(seed, study.n_lds, n_gen, n_mc)


# ---------------------------------------------------------------- max_gen_fixed_voltage


def test_direct_arithmetic():
    mag = toy_model(np.diag([0.01, 0.02]), V_PLUS - np.array([0.05, 0.04]))
    p = max_gen_fixed_voltage(mag, IndicatorVector(np.ones(2)), V_PLUS)
    assert p == pytest.approx(2.0, rel=1e-12)
    assert p <= 2.0


def test_no_positive_sensitivity_is_unbounded():
    mag = toy_model(-np.diag([0.01, 0.02]), np.full(2, 1.05))
    assert max_gen_fixed_voltage(mag, IndicatorVector(np.ones(2)), V_PLUS) == math.inf


def test_headroom_required():
    mag = toy_model(np.diag([0.01, 0.02]), np.array([1.05, 1.12]))
    with pytest.raises(NoHeadroomError) as err:
        max_gen_fixed_voltage(mag, IndicatorVector(np.ones(2)), V_PLUS)
    assert err.value.context["load"] == 1


def test_indicator_length_checked(synth10):
    with pytest.raises(ConfigError):
        max_gen_fixed_voltage(synth10.mag, IndicatorVector(np.ones(3)), V_PLUS)


def test_twobus_capacity(twobus):
    lam = IndicatorVector(np.array([1.0, 0.0, 0.0]))
    p = max_gen_fixed_voltage(twobus.mag, lam, 1.05)
    assert p == pytest.approx(5.0, rel=1e-10)
    # the oracle agrees with the closed form at that power; the linear model ignores the |z|^2 P^2 term,
    # so the true voltage sits 3.37e-3 pu under the limit
    v = twobus.solve_with_generation(np.array([p])).vL[0]
    assert abs(v - twobus_exact(0.01 + 0.01j, p, 1.0)) <= 1e-8
    assert 1.05 - abs(v) == pytest.approx(3.37e-3, abs=1e-5)


def test_matches_vectorised_samples(synth55):
    ss = shared_set(synth55, 20, n_mc=50)
    fast = run_fixed_voltage_on(synth55.mag, ss, V_PLUS).p_gen_max
    for sc, p in zip(ss.scenarios, fast):
        lam = np.zeros(synth55.adm.n_load_nodes)
        lam[synth55.load_nodes[list(sc.omega)]] = 1
        assert max_gen_fixed_voltage(synth55.mag, IndicatorVector(lam), V_PLUS) == pytest.approx(p, rel=1e-12)


# ---------------------------------------------------------------- run_fixed_voltage


def test_full_penetration_samples_identical(synth55):
    s = run_fixed_voltage(synth55.mag, 55, 50, 3, V_PLUS)
    assert np.ptp(s.p_gen_max) == 0
    assert s.p_gen_max[0] == pytest.approx(deterministic_capacity(synth55.mag, V_PLUS), rel=1e-14)


def test_same_seed_same_samples(synth55):
    a = run_fixed_voltage(synth55.mag, 28, 200, 9, V_PLUS)
    b = run_fixed_voltage(synth55.mag, 28, 200, 9, V_PLUS)
    np.testing.assert_array_equal(a.p_gen_max, b.p_gen_max)


def test_two_seeds_within_three_percent(synth55):
    phi = [estimate_phi_eps(run_fixed_voltage(synth55.mag, 28, 1000, seed, V_PLUS), 0.05).phi_eps_total
           for seed in (1, 2)]
    assert abs(phi[0] - phi[1]) / min(phi) <= 0.03


def test_sample_set_invariants(synth55):
    s = run_fixed_voltage(synth55.mag, 5, 500, 0, V_PLUS)
    assert np.all(s.finite > 0)
    assert s.unbounded_count + s.finite.size == len(s)


def test_threads_do_not_change_samples(synth55):
    ss = shared_set(synth55, 17, n_mc=1100)
    serial = run_fixed_voltage_on(synth55.mag, ss, V_PLUS, threads=1).p_gen_max
    parallel = run_fixed_voltage_on(synth55.mag, ss, V_PLUS, threads=4).p_gen_max
    np.testing.assert_array_equal(serial, parallel)
    assert eps_hat(synth55.mag, ss, 150.0, V_PLUS, threads=1) == eps_hat(synth55.mag, ss, 150.0, V_PLUS, threads=4)


@pytest.mark.parametrize("name", ["twobus", "synth10", "synth55"])
def test_binding_constraint(name):
    study = study_for(name)
    v_plus = study.net.v_plus
    n_gen = max(1, study.n_lds // 2)
    ss = draw_scenarios(4, study.n_lds, n_gen, 300)
    p = run_fixed_voltage_on(study.mag, ss, v_plus).p_gen_max
    v = predicted_load_voltages(study.mag, ss, p).max(axis=1)
    finite = np.isfinite(p)
    assert np.all(v[finite] <= v_plus)
    assert np.all(v_plus - v[finite] <= 1e-9)


def test_unbounded_scenarios():
    # load 1 never sees a voltage rise from its own generator
    G = np.array([[0.01, 0.0], [0.0, 0.0]])
    mag = toy_model(G, np.full(2, 1.05))
    ss = ScenarioSet(scenarios=(Scenario((0,), 0), Scenario((1,), 1)), n_lds=2)
    p = run_fixed_voltage_on(mag, ss, V_PLUS).p_gen_max
    assert p[1] == math.inf and np.isfinite(p[0])


@settings(max_examples=25, deadline=None)
@given(c=st.floats(0.1, 4.0))
def test_headroom_scaling(c):
    study = study_for("synth55")
    mag = study.mag
    rows = mag.load_rows
    h = V_PLUS - mag.v_bar_mag[rows]
    v_bar = mag.v_bar_mag.copy()
    v_bar[rows] = 1.5 - c * h
    scaled = replace(mag, v_bar_mag=v_bar)
    v_bar1 = mag.v_bar_mag.copy()
    v_bar1[rows] = 1.5 - h
    unit = replace(mag, v_bar_mag=v_bar1)
    ss = shared_set(study, 10, n_mc=100)
    p_c = run_fixed_voltage_on(scaled, ss, 1.5).p_gen_max
    p_1 = run_fixed_voltage_on(unit, ss, 1.5).p_gen_max
    # exact up to the round-off back-off, which depends on the headroom
    np.testing.assert_allclose(p_c, c * p_1, rtol=1e-11)


# ---------------------------------------------------------------- estimate_phi_eps


def test_eps_zero_is_minimum():
    est = estimate_phi_eps(samples_of([2, 5, 3]), 0.0)
    assert est.phi_eps_per_gen == 2 and est.phi_eps_total == 8


def test_eps_one_is_maximum():
    assert estimate_phi_eps(samples_of([2, 5, 3]), 1.0).phi_eps_total == 20


def test_uniform_quantile():
    rng = np.random.default_rng(0)
    est = estimate_phi_eps(samples_of(rng.uniform(1, 2, 1000), n_gen=7), 0.05)
    assert est.phi_eps_total == pytest.approx(7 * 1.05, abs=7 * 0.02)


def test_order_statistic_convention():
    vals = np.arange(1.0, 101.0)
    assert estimate_phi_eps(samples_of(vals, 1), 0.05).phi_eps_per_gen == 5
    assert estimate_phi_eps(samples_of(vals, 1), 0.051).phi_eps_per_gen == 6
    assert estimate_phi_eps(samples_of(vals, 1), 0.001).phi_eps_per_gen == 1


def test_unbounded_rank_last():
    s = samples_of([math.inf, 2, 3])
    assert estimate_phi_eps(s, 0.5).phi_eps_per_gen == 3
    with pytest.raises(AllUnboundedError):
        estimate_phi_eps(samples_of([math.inf, math.inf]), 0.5)


@pytest.mark.parametrize("eps", [-0.1, 1.5])
def test_epsilon_range(eps):
    with pytest.raises(ConfigError):
        estimate_phi_eps(samples_of([1.0]), eps)


def test_empty_samples():
    with pytest.raises(ConfigError):
        estimate_phi_eps(samples_of([]), 0.05)


def test_total_is_n_gen_times_per_gen(synth55):
    ss = shared_set(synth55, 28)
    fv = estimate_phi_eps(run_fixed_voltage_on(synth55.mag, ss, V_PLUS), 0.05)
    fp = run_fixed_power(synth55.mag, ss, 0.05, V_PLUS)
    for est in (fv, fp):
        assert est.phi_eps_total == est.n_gen * est.phi_eps_per_gen
        assert est.phi_eps_total_kw == est.phi_eps_total * est.base_power_kva


# ---------------------------------------------------------------- eps_hat


def test_eps_hat_at_zero(synth55):
    assert eps_hat(synth55.mag, shared_set(synth55, 28), 0.0, V_PLUS) == 0.0


def test_eps_hat_large_power(synth55):
    assert eps_hat(synth55.mag, shared_set(synth55, 28), 1e6, V_PLUS) == 1.0


def test_eps_hat_large_power_counts_rising_scenarios():
    G = np.array([[0.01, 0.0], [0.0, 0.0]])
    mag = toy_model(G, np.full(2, 1.05))
    ss = ScenarioSet(scenarios=(Scenario((0,), 0), Scenario((1,), 1)) * 2, n_lds=2)
    assert eps_hat(mag, ss, 1e9, V_PLUS) == 0.5


def test_eps_hat_monotone(synth55):
    ss = shared_set(synth55, 28, n_mc=500)
    grid = np.linspace(0, 400, 81)
    e = [eps_hat(synth55.mag, ss, p, V_PLUS) for p in grid]
    assert np.all(np.diff(e) >= 0)


@pytest.mark.parametrize("eps", [0.01, 0.05, 0.2, 0.5])
def test_quantile_indicator_duality(synth55, eps):
    ss = shared_set(synth55, 28)
    est = estimate_phi_eps(run_fixed_voltage_on(synth55.mag, ss, V_PLUS), eps)
    e = eps_hat(synth55.mag, ss, est.phi_eps_total, V_PLUS)
    slack = 1 / len(ss) + 1e-12
    assert eps - slack <= e <= eps + slack
    if eps == 0.05:
        assert 0.04 <= e <= 0.06


# ---------------------------------------------------------------- error_metric / bisection


@pytest.mark.parametrize(
    "eps_j, eps_jm1, epsilon, expected",
    [(0.3, 0.3, 0.05, 0.0), (0.10, 0.05, 0.05, 0.05), (0.5, 1.0, 0.0, 0.25)],
)
def test_error_metric(eps_j, eps_jm1, epsilon, expected):
    assert error_metric(eps_j, eps_jm1, epsilon) == pytest.approx(expected, abs=1e-15)


def test_bisection_converges(synth55):
    ss = shared_set(synth55, 28)
    est = run_fixed_power(synth55.mag, ss, 0.05, V_PLUS, tau=0.01)
    assert est.converged
    assert est.method == hostcap.FIXED_POWER
    assert 2 < est.iterations <= 60
    assert len(est.trace) == est.iterations


def test_cross_method_agreement(synth55):
    ss = shared_set(synth55, 28)
    fv = estimate_phi_eps(run_fixed_voltage_on(synth55.mag, ss, V_PLUS), 0.05).phi_eps_total
    fp = run_fixed_power(synth55.mag, ss, 0.05, V_PLUS, tau=0.01).phi_eps_total
    assert abs(fp - fv) / fv <= 0.025


def test_immediate_return_at_p0(synth55):
    est = bisect_fixed_power(synth55.mag, shared_set(synth55, 28), 0.0, 0.01, 0.0, 100.0, V_PLUS)
    assert est.iterations == 1
    assert est.phi_eps_total == 0.0


def test_bracket_above_epsilon(synth55):
    with pytest.raises(BracketError):
        bisect_fixed_power(synth55.mag, shared_set(synth55, 28), 0.05, 0.01, 1e4, 2e4, V_PLUS)


def test_bracket_order(synth55):
    with pytest.raises(BracketError):
        bisect_fixed_power(synth55.mag, shared_set(synth55, 28), 0.05, 0.01, 10.0, 5.0, V_PLUS)


def test_bad_tau(synth55):
    with pytest.raises(ConfigError):
        bisect_fixed_power(synth55.mag, shared_set(synth55, 28), 0.05, 0.0, 0.0, 5.0, V_PLUS)


def test_upper_end_doubles(synth55):
    ss = shared_set(synth55, 28)
    est = bisect_fixed_power(synth55.mag, ss, 0.05, 0.01, 0.0, 20.0, V_PLUS)
    ref = run_fixed_power(synth55.mag, ss, 0.05, V_PLUS)
    assert est.p1_doublings == 4  # 20 -> 320 brackets eps_hat = 5%
    assert est.converged
    assert est.phi_eps_total == pytest.approx(ref.phi_eps_total, rel=0.025)


def test_doubling_cap(synth55):
    with pytest.raises(BracketError):
        bisect_fixed_power(synth55.mag, shared_set(synth55, 28), 0.05, 0.01, 0.0, 1.0, V_PLUS, max_doublings=3)


def test_max_iter_reported(synth55, caplog):
    ss = shared_set(synth55, 55, n_mc=20)
    with caplog.at_level(logging.WARNING, logger="pvhostcap.hostcap"):
        est = run_fixed_power(synth55.mag, ss, 0.05, V_PLUS, max_iter=12)
    assert not est.converged
    assert est.iterations == 12
    assert "without meeting tau" in caplog.text


def test_full_penetration_both_methods(synth55):
    ss = shared_set(synth55, 55, n_mc=100)
    fv = estimate_phi_eps(run_fixed_voltage_on(synth55.mag, ss, V_PLUS), 0.05)
    fp = run_fixed_power(synth55.mag, ss, 0.05, V_PLUS)
    assert fp.phi_eps_total == pytest.approx(fv.phi_eps_total, rel=0.01)


# ---------------------------------------------------------------- sweep


def test_box_stats_order():
    rng = np.random.default_rng(2)
    stats = box_stats(rng.exponential(size=101))
    values = [stats[k] for k in hostcap.BOX_STATS]
    assert values == sorted(values)


def test_box_stats_with_unbounded():
    stats = box_stats([1.0, 2.0, 3.0, math.inf])
    assert stats["min"] == 1.0
    assert stats["median"] == 2.5
    assert stats["max"] == math.inf
    assert stats["q3"] == math.inf


def test_sweep_full_penetration_zero_width(synth55):
    summary = sweep_penetration(synth55.mag, [55], 100, 0, V_PLUS)
    assert summary.n_gens == [55]
    assert summary.value(55, "min") == summary.value(55, "max")


def test_sweep_rows(synth10):
    summary = sweep_penetration(synth10.mag, [2, 5, 9], 200, 0, V_PLUS, eps_list=(0.05, 0.1))
    assert len(summary.rows) == 3 * 7
    for n in summary.n_gens:
        vals = [summary.value(n, k) for k in hostcap.BOX_STATS]
        assert vals == sorted(vals)
        row = next(r for r in summary.rows if r.n_gen == n)
        assert row.n_pen == n / 9
    with pytest.raises(KeyError):
        summary.value(3, "min")


def test_sweep_tendencies(synth55):
    n_gens = [6, 11, 17, 22, 28, 33, 39, 44, 50, 55]
    summary = sweep_penetration(synth55.mag, n_gens, 500, 0, V_PLUS)
    med = summary.series("median", per_gen=True)
    phi5 = summary.series(hostcap.eps_stat_name(0.05))
    assert all(b <= a for a, b in zip(med, med[1:]))
    assert all(b >= a for a, b in zip(phi5, phi5[1:]))


def test_sweep_empty_list(synth10):
    with pytest.raises(ConfigError):
        sweep_penetration(synth10.mag, [], 10, 0, V_PLUS)


def test_sweep_out_of_range(synth10):
    with pytest.raises(ConfigError):
        sweep_penetration(synth10.mag, [10], 10, 0, V_PLUS)
