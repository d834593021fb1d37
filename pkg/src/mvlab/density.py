"""Gridded density estimates from particle snapshots."""
from __future__ import annotations

import numpy as np
from scipy import signal

from .errors import DomainEscapeError, UsageError
from .grid import Grid, GridFunction

MAX_ESCAPE_FRACTION = 1e-3


class GridDensity(GridFunction):
    """A density sampled at cell centres; ``meta`` carries provenance."""

    @property
    def mass(self) -> float:
        return self.integral()


def _as_points(positions, dim):
    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != dim:
        raise UsageError(f"positions have dim {x.shape[1]}, grid has dim {dim}")
    return x


def _inside(x: np.ndarray, grid: Grid) -> np.ndarray:
    L = grid.half_width
    ok = np.all((x >= -L) & (x < L), axis=1)
    n_out = int((~ok).sum())
    if n_out > MAX_ESCAPE_FRACTION * x.shape[0]:
        raise DomainEscapeError(
            f"{n_out} of {x.shape[0]} points fall outside [-{L}, {L})^{grid.dim} "
            f"(limit {MAX_ESCAPE_FRACTION:.1%}); use a larger box", np.nonzero(~ok)[0])
    return ok


def histogram(positions, grid: Grid) -> GridDensity:
    """Bin counts / (N * cell volume) on half-open cells [a, b)."""
    x = _as_points(positions, grid.dim)
    n = x.shape[0]
    ok = _inside(x, grid)
    idx = np.floor((x[ok] + grid.half_width) / grid.cell_width).astype(np.int64)
    idx = np.clip(idx, 0, grid.cells - 1)
    flat = np.ravel_multi_index(tuple(idx.T), grid.shape)
    counts = np.bincount(flat, minlength=grid.cells ** grid.dim).reshape(grid.shape)
    return GridDensity(grid, counts / (n * grid.cell_volume),
                       {"estimator": "histogram", "n": n, "escaped": int((~ok).sum())})


def linear_binning(positions, grid: Grid) -> np.ndarray:
    """Cloud-in-cell weights on cell centres, total weight = number of points inside."""
    x = _as_points(positions, grid.dim)
    ok = _inside(x, grid)
    x = x[ok]
    m = grid.cells
    u = (x + grid.half_width) / grid.cell_width - 0.5
    i0 = np.floor(u).astype(np.int64)
    f = u - i0
    # mass falling into the half cell beyond the outermost centres stays in the edge cell
    lo = np.clip(i0, 0, m - 1)
    hi = np.clip(i0 + 1, 0, m - 1)
    if grid.dim == 1:
        w = np.bincount(lo[:, 0], 1.0 - f[:, 0], minlength=m)
        w += np.bincount(hi[:, 0], f[:, 0], minlength=m)
        return w
    w = np.zeros(m * m)
    for ix, wx in ((lo[:, 0], 1.0 - f[:, 0]), (hi[:, 0], f[:, 0])):
        for iy, wy in ((lo[:, 1], 1.0 - f[:, 1]), (hi[:, 1], f[:, 1])):
            w += np.bincount(ix * m + iy, wx * wy, minlength=m * m)
    return w.reshape(m, m)


def gaussian_stencil(bandwidth: float, cell_width: float, cells: int) -> np.ndarray:
    """Discrete unit-sum Gaussian weights at integer cell offsets."""
    half = min(cells, int(np.ceil(8.0 * bandwidth / cell_width)) + 1)
    k = np.arange(-half, half + 1) * cell_width
    w = np.exp(-0.5 * (k / bandwidth) ** 2)
    return w / w.sum()


def kde(positions, bandwidth: float, grid: Grid, binning: str = "histogram") -> GridDensity:
    """Gaussian KDE at cell centres: binned counts convolved by FFT with the kernel.

    ``binning`` is "histogram" (counts per cell) or "linear" (cloud-in-cell
    weights, which removes the within-cell position error at the price of
    mixing neighbouring cells). The result is renormalised to unit mass on
    the box.
    """
    if not bandwidth > 0:
        raise UsageError("bandwidth must be > 0")
    x = _as_points(positions, grid.dim)
    if binning == "histogram":
        counts = histogram(x, grid).values
    elif binning == "linear":
        counts = linear_binning(x, grid)
    else:
        raise UsageError(f"unknown binning {binning!r}")
    g = gaussian_stencil(bandwidth, grid.cell_width, grid.cells)
    if grid.dim == 1:
        sm = signal.fftconvolve(counts, g, mode="same")
    else:
        sm = signal.fftconvolve(counts, np.outer(g, g), mode="same")
    sm = np.maximum(sm, 0.0)  # FFT round-off
    total = sm.sum() * grid.cell_volume
    return GridDensity(grid, sm / total,
                       {"estimator": "kde", "bandwidth": float(bandwidth), "n": x.shape[0],
                        "binning": binning})


def half_sample_difference(positions, bandwidth: float, grid: Grid,
                           binning: str = "histogram") -> GridFunction:
    """(kde(even) - kde(odd)) / 2: a draw of the estimator's Monte-Carlo noise.

    Its Littlewood-Paley block norms estimate the noise level of the full
    sample's KDE block by block (the two halves are independent, each with
    twice the variance of the full estimate).
    """
    x = _as_points(positions, grid.dim)
    a = kde(x[0::2], bandwidth, grid, binning)
    b = kde(x[1::2], bandwidth, grid, binning)
    return GridFunction(grid, 0.5 * (a.values - b.values), {"estimator": "half_sample_noise"})


def bandwidth_rule(n: int, dim: int, std: float) -> float:
    """Silverman's rule (4/(d+2))^(1/(d+4)) sigma N^(-1/(d+4))."""
    if n < 2:
        raise UsageError("bandwidth rule needs N >= 2")
    return (4.0 / (dim + 2)) ** (1.0 / (dim + 4)) * std * n ** (-1.0 / (dim + 4))


def silverman(positions, robust: bool = False) -> float:
    """Silverman bandwidth from the sample spread (mean over axes).

    ``robust`` replaces sigma by min(sigma, IQR / 1.349), for heavy tails.
    """
    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    sig = np.std(x, axis=0, ddof=1)
    if robust:
        q75, q25 = np.percentile(x, [75, 25], axis=0)
        sig = np.minimum(sig, (q75 - q25) / 1.349)
    std = float(np.mean(sig))
    return bandwidth_rule(x.shape[0], x.shape[1], std)


def l1_distance(f: GridFunction, g: GridFunction) -> float:
    if f.grid != g.grid:
        raise UsageError("l1_distance needs identical grids")
    return float(np.abs(f.values - g.values).sum() * f.grid.cell_volume)


def from_oracle(grid: Grid, func, **meta) -> GridDensity:
    """Put a closed-form density onto the grid (sampled at cell centres)."""
    g = GridFunction.from_callable(grid, func)
    return GridDensity(grid, g.values, {"estimator": "oracle", **meta})
