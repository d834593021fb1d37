import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from mvlab.density import (bandwidth_rule, from_oracle, half_sample_difference, histogram, kde,
                           l1_distance, silverman)
from mvlab.errors import DomainEscapeError, UsageError
from mvlab.grid import Grid


def _gauss(grid):
    return from_oracle(grid, stats.norm.pdf)


def test_histogram_point_mass():
    f = histogram(np.zeros(10), Grid(1.0, 2))
    assert f.grid.cell_width == 1.0
    assert np.array_equal(f.values, [0.0, 1.0])
    assert f.mass == 1.0


def test_histogram_uniform():
    x = np.random.default_rng(0).uniform(-1, 1, 200_000)
    f = histogram(x, Grid(1.0, 16))
    assert np.allclose(f.values, 0.5, atol=0.02)


def test_histogram_gaussian_l1_at_binomial_noise_level():
    # E|C - Np| ~ sqrt(2/pi) sqrt(Np(1-p)) per cell; summed this is about 0.040
    n, g = 100_000, Grid(5.0, 2 ** 9)
    edges = np.r_[g.centers() - g.cell_width / 2, g.half_width]
    p = np.diff(stats.norm.cdf(edges))
    expected = np.sqrt(2 / np.pi) * np.sum(np.sqrt(p * (1 - p) / n))
    x = np.random.default_rng(1).standard_normal(n)
    assert l1_distance(histogram(x, g), _gauss(g)) == pytest.approx(expected, rel=0.1)


def test_kde_single_particle():
    g = Grid(4.0, 1024)
    f = kde(np.zeros(1), 0.3, g)
    assert f.mass == pytest.approx(1.0, abs=1e-3)
    ref = stats.norm.pdf(g.centers(), scale=0.3)
    assert np.max(np.abs(f.values - ref)) < 1e-2 * ref.max()


def test_kde_gaussian_l1():
    x = np.random.default_rng(2).standard_normal(100_000)
    g = Grid(5.0, 2 ** 9)
    assert l1_distance(kde(x, silverman(x), g), _gauss(g)) < 0.015


def test_kde_small_bandwidth_approaches_histogram():
    x = np.random.default_rng(3).standard_normal(100_000)
    g = Grid(5.0, 2 ** 9)
    assert l1_distance(kde(x, g.cell_width / 4, g), histogram(x, g)) < 0.01


def test_linear_binning_option():
    x = np.random.default_rng(7).standard_normal(20_000)
    g = Grid(5.0, 2 ** 9)
    a = kde(x, 0.2, g, binning="linear")
    b = kde(x, 0.2, g)
    assert a.mass == pytest.approx(1.0, abs=1e-12)
    assert 0 < l1_distance(a, b) < 1e-2
    with pytest.raises(UsageError):
        kde(x, 0.2, g, binning="nearest")


def test_silverman_value():
    # (4/3)^(1/5) N^(-1/5) at sigma = 1, computed independently
    expected = (4.0 / 3.0) ** 0.2 * 1e5 ** -0.2
    assert bandwidth_rule(100_000, 1, 1.0) == pytest.approx(expected, rel=1e-15)
    assert bandwidth_rule(100_000, 1, 1.0) == pytest.approx(0.10592238410488121, rel=1e-14)


def test_robust_silverman_uses_iqr_for_heavy_tails():
    x = np.random.default_rng(4).standard_cauchy(10_000)
    assert silverman(x, robust=True) < 0.1 * silverman(x)


def test_escape_threshold():
    x = np.r_[np.zeros(999), 10.0]
    histogram(x, Grid(1.0, 8))          # 0.1% is tolerated
    with pytest.raises(DomainEscapeError):
        histogram(np.r_[np.zeros(998), 10.0, 10.0], Grid(1.0, 8))


def test_bad_bandwidth():
    with pytest.raises(UsageError):
        kde(np.zeros(3), 0.0, Grid(1.0, 8))


def test_half_sample_difference_is_small_and_centred():
    x = np.random.default_rng(5).standard_normal(50_000)
    g = Grid(6.0, 512)
    h = silverman(x)
    noise = half_sample_difference(x, h, g)
    assert abs(noise.integral()) < 1e-12
    assert noise.lp_norm(1) < 0.05


@given(pts=st.lists(st.floats(-3.9, 3.9, allow_nan=False), min_size=1, max_size=200),
       h=st.floats(0.05, 1.0))
def test_kde_is_a_density(pts, h):
    f = kde(np.array(pts), h, Grid(8.0, 256))
    assert np.all(f.values >= 0)
    assert f.mass == pytest.approx(1.0, abs=1e-12)


@given(pts=st.lists(st.floats(-1.0, 0.999, allow_nan=False), min_size=1, max_size=200))
def test_histogram_mass_is_one(pts):
    f = histogram(np.array(pts), Grid(1.0, 16))
    assert np.all(f.values >= 0)
    assert f.mass == pytest.approx(1.0, abs=1e-6)


def test_two_d_histogram_mass():
    x = np.random.default_rng(6).normal(size=(5000, 2))
    f = kde(x, 0.2, Grid(6.0, 64, 2))
    assert f.mass == pytest.approx(1.0, abs=1e-12)


def test_histogram_error_shrinks_with_n():
    grid = Grid(5.0, 512)
    ref = _gauss(grid)
    rng = np.random.default_rng(8)
    d = [l1_distance(histogram(rng.standard_normal(n), grid), ref)
         for n in (1_000, 16_000, 256_000)]
    assert d[0] > d[1] > d[2]
