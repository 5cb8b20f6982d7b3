import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from nanonmr.bath import spin_field_variance
from nanonmr.core import CONSTANTS, GAMMA_E, GAMMA_H, DomainError, SensorParams
from nanonmr.sensitivity import (
    budget,
    depth_for_threshold,
    dipolar_bz_correlation,
    eta_b,
    sigma_b,
    sigma_p,
    single_spin_bmax,
    single_spin_threshold,
    tau_opt,
)


def sensor(**kw):
    base = dict(t2=20e-6, stretch_n=1.0, contrast_C=0.2, alpha_avg=0.05, t_ir=1e-6)
    base.update(kw)
    return SensorParams(**base)


def test_sigma_p_single_shot_is_one():
    assert sigma_p(3e-6, 2e-6, 1e-6, 1.0, 1.0) == pytest.approx(1.0, rel=1e-15)


def test_sigma_p_shot_noise_scaling():
    a = sigma_p(1.0, 5e-6, 1e-6, 0.2, 0.05)
    assert sigma_p(4.0, 5e-6, 1e-6, 0.2, 0.05) == pytest.approx(a / 2, rel=1e-14)


def test_sigma_p_reference_value():
    v = sigma_p(1.0, 9e-6, 1e-6, 0.2, 0.04)
    assert v == pytest.approx(1e5**-0.5 / 0.04, rel=1e-12)
    assert round(v, 4) == 0.0791


def test_eta_at_optimum_closed_form():
    s = sensor(t_ir=0.0)
    t2 = s.t2
    expected = 2 * math.sqrt(2 * math.e) / (GAMMA_E * math.sqrt(t2) * s.contrast_C * math.sqrt(s.alpha_avg))
    assert tau_opt(t2, 0.0) == pytest.approx(t2 / 2, rel=1e-15)
    assert eta_b(t2 / 2, s) == pytest.approx(expected, rel=1e-13)


def test_eta_diverges_on_both_sides():
    s = sensor()
    tm = tau_opt(s.t2, s.t_ir)
    best = eta_b(tm, s)
    assert eta_b(tm * 1e-2, s) > 5 * best
    assert eta_b(tm * 1e2, s) > 5 * best


def test_eta_rejects_nonpositive_tau():
    with pytest.raises(DomainError):
        eta_b(0.0, sensor())


def test_eta_matches_small_angle_readout_slope():
    # P = 1/2 + C_tau * gamma * B * tau / 2, so dP/dB = C_tau gamma tau / 2
    s = sensor(stretch_n=1.3)
    tau = 7e-6
    c_tau = math.exp(-((tau / s.t2) ** 1.3))

    def p(b):
        return 0.5 + c_tau * s.gamma_e * b * tau / 2

    h = 1e-12
    slope = (p(h) - p(-h)) / (2 * h)
    per_root_hz = sigma_p(1.0, tau, s.t_ir, s.contrast_C, s.alpha_avg)
    assert eta_b(tau, s) == pytest.approx(per_root_hz / slope, rel=1e-6)


@pytest.mark.parametrize("total", [0.1, 1.0, 37.0])
def test_eta_is_sigma_b_times_root_time(total):
    s = sensor(stretch_n=1.5)
    tau = 4e-6
    assert sigma_b(total, tau, s) * math.sqrt(total) == pytest.approx(eta_b(tau, s), rel=1e-13)


def test_reported_sensitivity_is_reachable():
    # 307 nT/sqrt(Hz) sits inside the band spanned by plausible sensors
    etas = []
    for c in (0.1, 0.3):
        for a in (0.01, 0.1):
            for t2 in (5e-6, 50e-6):
                s = sensor(contrast_C=c, alpha_avg=a, t2=t2, t_ir=1e-6)
                etas.append(budget(s).eta)
    assert min(etas) < 307e-9 < max(etas)


def test_tau_opt_examples():
    assert tau_opt(10e-6, 0.0) == pytest.approx(5e-6, rel=1e-15)
    assert tau_opt(10e-6, 1e-6) == pytest.approx(0.25 * (math.sqrt(224) + 8) * 1e-6, rel=1e-14)
    assert tau_opt(10e-6, 1e-6) * 1e6 == pytest.approx(5.742, abs=5e-4)


def _grid_argmin(s):
    # brute force: dense log grid, then golden-section refinement on the bracket
    grid = s.t2 * np.logspace(-3, 1, 20001)
    vals = eta_b(grid, s)
    i = int(np.argmin(vals))
    a, b = grid[i - 1], grid[i + 1]
    g = (math.sqrt(5) - 1) / 2
    for _ in range(200):
        c, d = b - g * (b - a), a + g * (b - a)
        if eta_b(c, s) < eta_b(d, s):
            b = d
        else:
            a = c
    return (a + b) / 2


def test_tau_opt_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(50):
        t2 = rng.uniform(1e-6, 100e-6)
        t_ir = rng.uniform(0, 5e-6)
        s = sensor(t2=t2, t_ir=t_ir)
        assert tau_opt(t2, t_ir) == pytest.approx(_grid_argmin(s), rel=1e-4)


@pytest.mark.parametrize("n", [0.7, 1.5, 2.0, 3.0])
def test_tau_opt_numeric_for_stretched_decay(n):
    s = sensor(stretch_n=n, t2=15e-6, t_ir=2e-6)
    assert tau_opt(s.t2, s.t_ir, n) == pytest.approx(_grid_argmin(s), rel=1e-4)


def test_tau_opt_is_global_minimum():
    s = sensor()
    tm = tau_opt(s.t2, s.t_ir)
    grid = np.logspace(-9, -3, 5000)
    assert np.all(eta_b(grid, s) >= eta_b(tm, s) * (1 - 1e-12))


def test_budget_fields():
    s = sensor()
    b = budget(s)
    assert b.eta > 0 and b.tau_opt > 0
    assert b.tau_opt == tau_opt(s.t2, s.t_ir)
    assert b.eta == eta_b(b.tau_opt, s)
    assert b.sigma_p_per_shot == pytest.approx(1 / (s.contrast_C * math.sqrt(s.alpha_avg)), rel=1e-14)


def test_bmax_examples():
    assert single_spin_bmax(GAMMA_H, 2e-9) == pytest.approx(3.53e-7, rel=2e-3)
    assert single_spin_bmax(2 * math.pi * 28.02e9, 2e-9) == pytest.approx(2.32e-4, rel=2e-3)
    assert single_spin_bmax(GAMMA_H, 4e-9) == pytest.approx(single_spin_bmax(GAMMA_H, 2e-9) / 8, rel=1e-14)


def test_threshold_examples():
    th = single_spin_threshold(GAMMA_H, 2e-9)
    assert th * 1e9 == pytest.approx(353, abs=1)
    assert 307e-9 < th


@given(st.floats(0.5e-9, 50e-9))
def test_threshold_ratio_is_gamma_ratio(d):
    r = single_spin_threshold(GAMMA_E, d) / single_spin_threshold(GAMMA_H, d)
    assert r == pytest.approx(GAMMA_E / GAMMA_H, rel=1e-12)
    assert r == pytest.approx(658, rel=2e-3)


def test_depth_for_threshold():
    assert depth_for_threshold(GAMMA_H, 350e-9) * 1e9 == pytest.approx(2.0, abs=0.01)


@given(st.floats(0.5e-9, 50e-9))
def test_depth_threshold_round_trip(d):
    assert depth_for_threshold(GAMMA_H, single_spin_threshold(GAMMA_H, d)) == pytest.approx(d, rel=1e-12)


def _b(r):
    return CONSTANTS.mu0_over_4pi * GAMMA_H * CONSTANTS.hbar / r**3


def test_correlation_on_axis():
    r = 3e-9
    for t in (0.0, 1e-6, 3.3e-6):
        assert dipolar_bz_correlation(t, GAMMA_H, r, [0, 0, 1], 5e6) == pytest.approx(_b(r) ** 2, rel=1e-14)


def test_correlation_at_magic_angle():
    # static part vanishes; 9 (1 - 1/3)(1/3) / 4 = 1/2 of b^2 oscillates
    r, w = 3e-9, 5e6
    n = [math.sqrt(2 / 3), 0.0, math.sqrt(1 / 3)]
    for t in (0.0, 0.2e-6, 0.7e-6):
        v = dipolar_bz_correlation(t, GAMMA_H, r, n, w)
        assert v == pytest.approx(0.5 * _b(r) ** 2 * math.cos(w * t), rel=1e-12, abs=1e-14 * _b(r) ** 2)


def test_sphere_average_matches_bath_variance():
    r = 3e-9

    def integrand(theta, phi, fn):
        n = [math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]
        return fn(n) * math.sin(theta)

    corr = integrate.dblquad(lambda th, ph: integrand(th, ph, lambda n: dipolar_bz_correlation(0.0, GAMMA_H, r, n, 1.0)), 0, 2 * math.pi, 0, math.pi)[0]
    bath = integrate.dblquad(lambda th, ph: integrand(th, ph, lambda n: spin_field_variance(np.array(n) * r, [0, 0, 1], GAMMA_H)[0]), 0, 2 * math.pi, 0, math.pi)[0]
    assert corr / (4 * math.pi) == pytest.approx(0.5 * _b(r) ** 2, rel=1e-10)
    assert corr == pytest.approx(bath, rel=1e-10)


def test_units_do_not_change_eta():
    # same sensor described in microseconds and in seconds
    s = sensor()
    tau_us = 6.0
    eta_si = eta_b(tau_us * 1e-6, s)
    assert eta_si * 1e9 == pytest.approx(eta_b(6e-6, sensor(t2=20.0e-6)) * 1e9, rel=1e-15)
    # a gamma quoted per gauss: gamma_G = gamma_T * 1e-4 gives eta in gauss
    s_g = sensor(gamma_e=GAMMA_E * 1e-4)
    assert eta_b(tau_us * 1e-6, s_g) * 1e-4 == pytest.approx(eta_si, rel=1e-14)
