import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from mvlab import drifts as D
from mvlab.errors import UsageError
from mvlab.linearize import (gaussian_delta_l1, gaussian_derivative_l1, increment_scaling,
                             loglog_slope, pe_bound_check, run_linearization)

EPS = [2.0 ** -k for k in (3, 4, 5, 6)]


@pytest.mark.parametrize("order", [1, 2])
def test_constant_drift_is_reproduced_exactly(order):
    r = run_linearization(order, D.constant(0.7), 1.0, EPS, 50)
    assert r.ae_values == [0.0] * len(EPS)


def test_order_zero_constant_drift_misses_the_drift_integral():
    # order 0 drops the drift altogether, so X - Y = c * eps on every path
    r = run_linearization(0, D.constant(0.7), 1.0, EPS, 50)
    assert np.allclose(r.ae_values, [0.7 * e for e in r.epsilons], rtol=1e-12)


def test_order_zero_bounded_by_eps():
    r = run_linearization(0, D.sign(), 1.0, EPS, 500, seed=2)
    assert all(a <= e * (1 + 1e-12) for a, e in zip(r.ae_values, r.epsilons))


def test_order_two_needs_gradient():
    with pytest.raises(UsageError, match="gradient"):
        run_linearization(2, D.sign(), 1.0, EPS, 10)


def test_epsilon_validation():
    with pytest.raises(UsageError):
        run_linearization(1, D.tanh(), 1.0, [0.1], 10)
    with pytest.raises(UsageError):
        run_linearization(1, D.tanh(), 1.0, [0.8, 0.1], 10)


def test_workers_do_not_change_result():
    a = run_linearization(1, D.tanh(), 1.0, EPS, 300, seed=1)
    b = run_linearization(1, D.tanh(), 1.0, EPS, 300, seed=1, workers=2)
    assert a.ae_values == b.ae_values


def test_dt_check_reports_small_change():
    r = run_linearization(1, D.tanh(), 1.0, EPS, 400, seed=3, dt_check=True)
    assert r.dt_check is not None and r.dt_check < 0.1


def test_two_d_linearization_runs():
    r = run_linearization(2, D.tanh(), 1.0, EPS, 200, dim=2)
    assert r.fitted_slope > 1.5


def test_csv_layout():
    r = run_linearization(1, D.tanh(), 1.0, EPS, 20)
    lines = r.to_csv().splitlines()
    assert lines[0] == "epsilon,ae_mean,ae_stderr" and len(lines) == len(EPS) + 1


def test_loglog_slope_exact():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    slope, se = loglog_slope(x, 3.0 * x ** 1.5)
    assert slope == pytest.approx(1.5, abs=1e-12) and se < 1e-12


def test_pe_zero_offset():
    assert pe_bound_check(1, [0.0], 0.3)[0].delta_l1 == 0.0


@given(r=st.floats(0.01, 3.0))
def test_first_difference_closed_form(r):
    # ||rho(. + r) - rho||_1 = 2 (2 Phi(r/2) - 1) for the standard normal density
    ref = 2 * (2 * stats.norm.cdf(r / 2) - 1)
    assert gaussian_delta_l1(1, r, 1.0) == pytest.approx(ref, rel=1e-6)


def test_small_offset_limit_is_derivative_norm():
    assert gaussian_derivative_l1(1) == pytest.approx(2 * stats.norm.pdf(0), rel=1e-12)
    for m in (1, 2, 3):
        row = pe_bound_check(m, [1e-3], 1.0)[0]
        assert row.ratio == pytest.approx(gaussian_derivative_l1(m), rel=5e-3)


def test_pe_ratio_regime():
    row = pe_bound_check(2, [0.1], 0.04)[0]
    assert row.ratio <= 1.0


@given(m=st.integers(1, 3), frac=st.floats(0.05, 1.0), eps=st.floats(0.01, 1.0))
def test_pe_scaling_collapse(m, frac, eps):
    h = frac * math.sqrt(eps)
    a = pe_bound_check(m, [h], eps)[0].ratio
    b = pe_bound_check(m, [2 * h], 4 * eps)[0].ratio
    assert abs(a - b) <= 1e-10


def test_brownian_increment_exponent():
    r = increment_scaling(D.zero(), 0.5, [1e-4, 1e-3, 1e-2, 1e-1], 4000, seed=1)
    assert abs(r.exponent - 0.5) <= 0.02
    assert r.values[-1] == pytest.approx(math.sqrt(2 * 0.1 / math.pi), rel=0.05)


def test_second_moment_increment_exponent():
    r = increment_scaling(D.sign(), 1.0, [1e-4, 1e-3, 1e-2, 1e-1], 4000, seed=2, moment=2)
    assert abs(r.exponent - 1.0) <= 0.05
