import math

import numpy as np
import pytest
from scipy import integrate, stats

from mvlab import oracle as O
from mvlab.errors import UsageError
from mvlab.grid import Grid


def test_density_at_origin():
    # g_1(1) + Q(-1) at t = 1, from scipy's normal law
    ref = stats.norm.pdf(1.0) + stats.norm.sf(-1.0)
    assert O.sign_sde_density0(1.0, 0.0) == pytest.approx(ref, rel=1e-14)
    assert O.sign_sde_density0(1.0, 0.0) == pytest.approx(1.0833154705876864, rel=1e-14)


def test_kink_jump_value():
    assert O.kink_jump(1.0) == pytest.approx(-4.0 * O.sign_sde_density0(1.0, 0.0), rel=1e-14)
    assert O.kink_jump(1.0) == pytest.approx(-4.333261882350746, rel=1e-14)


@pytest.mark.parametrize("t", [0.1, 1.0, 3.0])
def test_density_has_unit_mass(t):
    m = 2 * integrate.quad(lambda y: O.sign_sde_density0(t, y), 0, np.inf, epsabs=1e-13)[0]
    assert m == pytest.approx(1.0, abs=1e-10)


def test_slope_matches_finite_difference():
    y = np.array([-1.3, -0.2, 0.4, 2.0])
    h = 1e-6
    fd = (O.sign_sde_density0(1.0, y + h) - O.sign_sde_density0(1.0, y - h)) / (2 * h)
    assert np.allclose(O.sign_sde_density0_slope(1.0, y), fd, atol=1e-7)


def test_long_time_limit_is_laplace():
    # stationary law of dX = -sign(X) dt + dW is exp(-2|y|)
    y = np.linspace(-3, 3, 13)
    assert np.allclose(O.sign_sde_density0(60.0, y), np.exp(-2 * np.abs(y)), atol=1e-8)


def test_fokker_planck_residual_small():
    assert O.fokker_planck_residual(1.0) < 1e-6


def test_fpt_density_mass_and_mode():
    m = integrate.quad(lambda s: O.fpt_density(1.0, s), 0, np.inf, epsabs=1e-12)[0]
    assert m == pytest.approx(1.0, abs=1e-9)
    # mode against a direct maximisation of the density
    s = np.linspace(0.01, 2.0, 200_001)
    assert O.fpt_mode(1.0) == pytest.approx(s[np.argmax(O.fpt_density(1.0, s))], abs=1e-5)
    assert O.fpt_mode(1.0) == pytest.approx(0.3027756377, abs=1e-10)


def test_fpt_matches_scipy_inverse_gaussian():
    # hitting time of 0 from x0 with unit drift: IG(mean |x0|, shape x0^2)
    s = np.array([0.2, 0.7, 1.5, 4.0])
    x0 = 1.7
    ref = stats.invgauss.pdf(s, mu=1 / x0, scale=x0 ** 2)
    assert np.allclose(O.fpt_density(x0, s), ref, rtol=1e-12)


@pytest.mark.parametrize("x0", [0.5, -1.0])
def test_density_from_x0_has_unit_mass(x0):
    m = integrate.quad(lambda y: O.sign_sde_density_x(1.0, x0, y), -12, 12,
                       points=[0.0, x0], limit=200)[0]
    assert m == pytest.approx(1.0, abs=1e-7)


def test_density_from_x0_continuous_in_x0():
    y = np.array([-0.5, 0.3, 1.0])
    near = O.sign_sde_density_x(1.0, 1e-4, y)
    assert np.allclose(near, O.sign_sde_density0(1.0, y), atol=1e-3)


def test_density_from_x0_matches_monte_carlo():
    rng = np.random.default_rng(0)
    x = np.full(200_000, 1.0)
    dt = 1e-3
    for _ in range(1000):
        x += -np.sign(x) * dt + math.sqrt(dt) * rng.standard_normal(x.size)
    edges = np.linspace(-2, 3, 11)
    frac = np.histogram(x, edges)[0] / x.size
    ref = [integrate.quad(lambda y: O.sign_sde_density_x(1.0, 1.0, y), a, b)[0]
           for a, b in zip(edges[:-1], edges[1:])]
    assert np.allclose(frac, ref, atol=4e-3)


def test_ou_marginal():
    m, v = O.ou_moments(1.0, 1.0, 2.0)
    assert m == pytest.approx(2 * math.exp(-1))
    assert v == pytest.approx((1 - math.exp(-2)) / 2)
    assert O.ou_moments(0.0, 2.0) == (0.0, 2.0)


def test_density_on_grid_and_errors():
    f = O.density_on_grid(Grid(8.0, 1024), "sign0", t=1.0)
    # midpoint sampling across the kink costs O(cell_width^2) of mass
    assert f.mass == pytest.approx(1.0, abs=1e-4)
    with pytest.raises(UsageError):
        O.density_on_grid(Grid(8.0, 16), "nope")
    with pytest.raises(UsageError):
        O.sign_sde_density0(0.0, 0.0)
    with pytest.raises(UsageError):
        O.sign_sde_density_x(1.0, 0.0, 0.0)
