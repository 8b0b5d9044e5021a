import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rglab.params import ModelParams
from rglab.pertflow import (CouplingState, amplitude, chi_ode_invert, chi_prediction, coeffs,
                            dmu_dmu0, domain_check, gamma_exponent, mu0_backward, mu0_bisection,
                            mu_bar_sequence, nu_c_asymptote, replay_forward_mp, run_flow,
                            sequences, t0_norm)

P4 = ModelParams(d=4, L=2, n=1)


def test_scale_zero_coefficients_by_hand():
    # at j = 0, m2 = 0: c = 15/16, c2 = 15/16, c3 = 1 - 3/16 + 2/256
    row = coeffs(0, 0.0, P4)
    c, c3 = 15 / 16, 1 - 3 / 16 + 2 / 256
    assert row.beta == pytest.approx(9 * c, rel=1e-15)
    assert row.eta == pytest.approx(3 * c, rel=1e-15)
    assert row.xi == pytest.approx(6 * c3 + 9 * c * c, rel=1e-15)
    assert row.xi == 12.83203125


def test_gamma_exponents():
    assert gamma_exponent(1) == pytest.approx(1 / 3)
    assert gamma_exponent(2) == pytest.approx(0.4)
    assert gamma_exponent(0) == 0.25


def test_coupling_decay_one_over_j():
    s = sequences(0.05, 0.0, P4, 10000)
    assert 0.95 <= s.g[10000] * s.beta00 * 10000 <= 1.05


@pytest.mark.parametrize("g0", [0.01, 0.05, 0.1])
def test_backward_equals_bisection(g0):
    b = mu0_backward(g0, 0.0, P4)
    assert abs(b.mu0c - mu0_bisection(g0, 0.0, P4)) < 1e-8
    assert b.tail_bound < 1e-15


def test_frozen_critical_value():
    # value agreed by the two independent constructions above (to 3e-15)
    assert mu0_backward(0.02, 0.0, P4).mu0c == pytest.approx(-0.06970684910559358, abs=1e-13)


def test_replay_stays_in_intervals():
    g, mu = replay_forward_mp(0.05, 0.0, P4, 1000)
    assert np.all(np.abs(mu) <= 4 * 3 * g)
    mub, gb, _ = mu_bar_sequence(0.05, 0.0, P4, 60)
    assert np.allclose(mub, mu[:61], rtol=1e-10, atol=1e-300)


def test_small_g_asymptote():
    g = 1e-3
    r = mu0_backward(g, 0.0, P4).mu0c / nu_c_asymptote(g, P4)
    assert 0.9 <= r <= 1.1
    assert nu_c_asymptote(g, P4) == pytest.approx(-3 * g * 1.25)


def test_derivative_flow_vs_finite_difference():
    g0 = 0.05
    mu0 = mu0_backward(g0, 0.0, P4).mu0c
    h = 1e-6
    a = run_flow(g0, mu0 + h, 0.0, P4, 50)
    b = run_flow(g0, mu0 - h, 0.0, P4, 50)
    fd = (a.mu[50] - b.mu[50]) / (2 * h)
    prod = dmu_dmu0(run_flow(g0, mu0, 0.0, P4, 50))[50]
    assert abs(fd / prod - 1) < 1e-5


@given(st.floats(1e-4, 0.1))
def test_g_sequence_positive_decreasing(g0):
    s = sequences(g0, 0.0, P4, 300)
    assert np.all(s.g > 0) and np.all(np.diff(s.g) < 0)
    assert np.all(s.Pi > 0)


@given(st.floats(0.005, 0.1), st.floats(1e-6, 1e-2))
def test_flow_leaves_upward_above_critical(g0, delta):
    mu0 = mu0_backward(g0, 0.0, P4).mu0c
    up = run_flow(g0, mu0 + delta, 0.0, P4, 60)
    down = run_flow(g0, mu0 - delta, 0.0, P4, 60)
    assert up.mu[60] > 0 > down.mu[60]
    assert np.all(dmu_dmu0(up) > 0)


@pytest.mark.parametrize("gam,tol", [(0.25, 0.02), (1 / 3, 0.02), (0.4, 0.03)])
def test_ode_inversion_recovers_exponent(gam, tol):
    o = chi_ode_invert(gam, 1 / amplitude(0.05, P4), np.geomspace(1e-10, 1e-2, 41))
    assert abs(o.exponent - gam) < tol


def test_effective_mass_root():
    c = chi_prediction(0.05, 1e-4, P4)
    assert c.residual < 1e-10
    assert c.chi_effective == pytest.approx(1 / c.m2)


def test_massive_critical_point_shifts():
    a = mu0_backward(0.05, 0.0, P4).mu0c
    b = mu0_backward(0.05, 0.01, P4).mu0c
    assert b != a and math.isfinite(b)


def test_domain_and_norm():
    U = CouplingState(0, 0.1, 0.2, -0.3)
    assert t0_norm(U, 2.0) == pytest.approx(0.2 * 4 + 0.3 * 2 + 0.1)
    assert domain_check(CouplingState(0, 0.0, 0.05, 0.0), 0, 0.05, P4)
    assert not domain_check(CouplingState(0, 0.0, 5.0, 0.0), 0, 0.05, P4)
