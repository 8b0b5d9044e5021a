import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rglab.meanfield import (MeanFieldState, fixed_point_residual, laplace_ratio_demo, mean_spin,
                             potential_hessian_min, renorm_potential, solve_magnetisation,
                             susceptibility)


@pytest.mark.parametrize("beta", [0.1, 0.5, 0.9, 0.999])
def test_high_temperature_susceptibility(beta):
    assert susceptibility(MeanFieldState(1, beta, 0.0)) == pytest.approx(1 / (1 - beta), rel=1e-14)
    # for n components the single-spin variance at zero field is 1/n
    assert susceptibility(MeanFieldState(3, 3 * beta, 0.0)) == pytest.approx(1 / (3 - 3 * beta), rel=1e-10)


def test_critical_isotherm():
    M = solve_magnetisation(MeanFieldState(1, 1.0, 1e-6))
    assert 0.99 <= M / (3e-6) ** (1 / 3) <= 1.01


def test_spontaneous_magnetisation():
    M = solve_magnetisation(MeanFieldState(1, 1 + 1e-4, 0.0))
    assert 0.95 <= M / math.sqrt(3e-4) <= 1.05


@given(st.sampled_from([1, 2, 3, 4]), st.floats(0.05, 6.0), st.floats(-2.0, 2.0))
def test_fixed_point_residual(n, beta, h):
    st_ = MeanFieldState(n, beta, h)
    phi = solve_magnetisation(st_)
    assert fixed_point_residual(phi, st_) < 1e-12
    if h != 0:
        assert susceptibility(st_) > 0
        assert math.copysign(1, phi) == math.copysign(1, h)


@given(st.sampled_from([1, 3]), st.floats(0.05, 1.0), st.floats(-1.5, 1.5), st.floats(-1.0, 1.0))
def test_convex_at_high_temperature(n, frac, phi, h):
    st_ = MeanFieldState(n, n * frac, h)
    assert potential_hessian_min(phi, st_) >= -1e-12


@given(st.floats(0.1, 3.0), st.floats(-1.2, 1.2))
def test_closed_forms_match_sphere_quadrature(beta, phi):
    for n in (1, 3):
        s = MeanFieldState(n, beta, 0.0)
        a = renorm_potential(phi, s)
        b = renorm_potential(phi, s, quadrature=True)
        if n == 1:
            b -= beta / 2  # the n = 1 closed form is normalised to V(0) = 0
        assert abs(a - b) < 1e-10


def test_minimiser_of_potential():
    s = MeanFieldState(1, 1.5, 0.0)
    phi0 = solve_magnetisation(s)
    xs = np.linspace(-1.5, 1.5, 3001)
    vs = [renorm_potential(x, s) for x in xs]
    assert abs(abs(xs[int(np.argmin(vs))]) - phi0) < 2e-3


def test_langevin_mean_spin():
    a = 1.7
    assert mean_spin(a, 3) == pytest.approx(1 / math.tanh(a) - 1 / a, rel=1e-12)


def test_laplace_ratio_concentrates():
    s = MeanFieldState(1, 0.5, 0.2)
    vals, phi0 = laplace_ratio_demo(lambda x: x, s, [10, 100, 1000])
    errs = np.abs(vals - phi0)
    assert errs[2] < errs[1] < errs[0]
    assert phi0 == pytest.approx(solve_magnetisation(s), abs=1e-6)


def test_rejects_bad_state():
    with pytest.raises(ValueError):
        MeanFieldState(0, 1.0)
    with pytest.raises(ValueError):
        MeanFieldState(1, -1.0)
