import numpy as np
import pytest
from hypothesis import given, strategies as st

from mvlab import drifts as D
from mvlab import kernels as K
from mvlab.errors import UsageError
from mvlab.grid import Grid, GridFunction


@pytest.mark.parametrize("drift", [D.tanh(0.7), D.linear(-2.0), D.mollified_sign(0.3),
                                   D.kernel_drift(K.smooth_kernel(0.5))],
                         ids=lambda d: d.name)
def test_gradients_match_finite_differences(drift):
    x = np.linspace(-1.5, 1.5, 31)[:, None]
    h = 1e-6
    fd = (drift(0.0, x + h) - drift(0.0, x - h)) / (2 * h)
    assert np.allclose(drift.gradient(0.0, x)[:, 0, 0], fd[:, 0], atol=1e-5)
    assert np.max(np.abs(drift.gradient(0.0, x))) <= drift.grad_bound + 1e-9


def test_by_name_and_config_round_trip():
    d = D.by_name("linear", rate=-1.5)
    assert D.from_config(d.to_config()).to_config() == d.to_config()
    with pytest.raises(UsageError):
        D.by_name("nope")
    with pytest.raises(UsageError):
        D.by_name("tanh", bogus=1)


def test_sign_drift_zero_at_origin():
    assert np.array_equal(D.sign()(0.0, np.array([[0.0], [2.0]])), [[0.0], [-1.0]])


def test_frozen_field_interpolates():
    c = np.linspace(-1, 1, 5)
    d = D.frozen_field(-c, c)
    assert np.allclose(d(0.0, np.array([[0.25]])), [[-0.25]])
    assert np.allclose(d.gradient(0.0, np.array([[0.25]])), [[[-1.0]]])


def test_schedule_scales_drift():
    d = D.schedule(D.tanh(), lambda t: 2.0 * t)
    x = np.array([[0.3]])
    assert np.allclose(d(0.5, x), D.tanh()(0.5, x))


def test_grid_validation():
    with pytest.raises(UsageError):
        Grid(1.0, 12)
    with pytest.raises(UsageError):
        Grid(-1.0, 16)
    with pytest.raises(UsageError):
        GridFunction(Grid(1.0, 4), np.zeros(5))


@given(k=st.integers(1, 10), hw=st.floats(0.5, 20))
def test_grid_centres_symmetric(k, hw):
    g = Grid(hw, 2 ** k)
    c = g.centers()
    assert np.allclose(c, -c[::-1], atol=1e-12 * hw)
    assert g.cell_width * g.cells == pytest.approx(2 * hw)


def test_pad_to_preserves_values():
    g = Grid(1.0, 8)
    f = GridFunction(g, np.arange(8.0))
    big = f.pad_to(g.padded(2))
    assert big.integral() == pytest.approx(f.integral())
    assert np.allclose(big.at(g.centers()), f.values)
