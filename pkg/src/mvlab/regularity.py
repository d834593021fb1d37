"""Smoothness diagnostics for gridded functions.

Two instruments are provided. Finite-difference seminorms use the m-th
difference Delta_h^m on dyadic, axis-aligned offsets h. Littlewood-Paley
blocks split the spectrum into dyadic annuli with a smooth partition; the
decay rate of the block norms gives a fitted regularity index.

Functions are always read as zero outside their box.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from math import comb, gamma as gamma_fn, pi

import numpy as np
from scipy import fft as sfft
from scipy import special

from .errors import InsufficientBlocksError, UsageError
from .grid import Grid, GridFunction, lp_norm

FLOOR = 1e-12
EDGE_TOL = 1e-10
INDEX_CAP = 6.0
LN2 = np.log(2.0)


# ---------------------------------------------------------------- differences

def _shift_cells(grid: Grid, h) -> tuple:
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if h.size == 1 and grid.dim > 1:
        raise UsageError("offset must be a vector in dim > 1")
    if h.size != grid.dim:
        raise UsageError(f"offset has {h.size} components, grid has dim {grid.dim}")
    k = h / grid.cell_width
    kr = np.round(k)
    if np.any(np.abs(k - kr) > 1e-9 * np.maximum(1.0, np.abs(k))):
        raise UsageError(f"offset {h.tolist()} is not a multiple of the cell width "
                         f"{grid.cell_width}")
    return tuple(int(v) for v in kr)


def _shifted(a: np.ndarray, shift: tuple) -> np.ndarray:
    """out[i] = a[i + shift], zero where i + shift leaves the array."""
    out = np.zeros_like(a)
    src, dst = [], []
    for n, s in zip(a.shape, shift):
        if abs(s) >= n:
            return out
        if s >= 0:
            src.append(slice(s, n))
            dst.append(slice(0, n - s))
        else:
            src.append(slice(0, n + s))
            dst.append(slice(-s, n))
    out[tuple(dst)] = a[tuple(src)]
    return out


def _delta_array(a: np.ndarray, shift: tuple, m: int) -> np.ndarray:
    out = np.zeros_like(a, dtype=float)
    for j in range(m + 1):
        c = (-1) ** (m - j) * comb(m, j)
        out += c * _shifted(a, tuple(j * s for s in shift))
    return out


def delta_power(f: GridFunction, h, m: int) -> GridFunction:
    """m-th forward difference sum_j (-1)^(m-j) C(m,j) f(x + j h) on f's grid."""
    if m < 1:
        raise UsageError("difference order m must be >= 1")
    shift = _shift_cells(f.grid, h)
    return GridFunction(f.grid, _delta_array(f.values, shift, m), {"m": m, "h": shift})


def _padded_delta_norm(values: np.ndarray, shift: tuple, m: int, p: float, vol: float):
    """L^p norm of Delta^m on a zero-padded copy, so nothing leaves the box."""
    pad = [(m * abs(s), m * abs(s)) for s in shift]
    a = np.pad(values, pad)
    return lp_norm(_delta_array(a, shift, m), vol, p)


@dataclass(frozen=True)
class Offset:
    k: int            # dyadic level, |h| ~ 2^-k
    axis: int
    cells: int        # offset in cells
    length: float     # actual |h|


def dyadic_offsets(grid: Grid, k_max: int | None = None) -> list:
    """Axis-aligned offsets of length ~2^-k (rounded to whole cells), k = 0..k_max."""
    w = grid.cell_width
    out, seen = [], set()
    k = 0
    while True:
        if k_max is not None and k > k_max:
            break
        cells = int(round(2.0 ** -k / w))
        if cells < 1:
            break
        if cells * w <= 1.0 + 1e-12 and cells not in seen:
            seen.add(cells)
            for axis in range(grid.dim):
                out.append(Offset(k, axis, cells, cells * w))
        k += 1
    if not out:
        raise UsageError("grid too coarse: no offset with |h| <= 1 fits on it")
    return out


def sphere_area(dim: int) -> float:
    return 2.0 * pi ** (dim / 2) / gamma_fn(dim / 2)


def shell_values(f: GridFunction, p: float, s: float, m: int, offsets=None) -> list:
    """(k, axis, |h|, ||Delta_h^m f||_p / |h|^s) for each dyadic offset."""
    if not m > s:
        raise UsageError(f"need m > s (got m={m}, s={s})")
    offsets = dyadic_offsets(f.grid) if offsets is None else offsets
    rows = []
    for o in offsets:
        shift = tuple(o.cells if i == o.axis else 0 for i in range(f.grid.dim))
        v = _padded_delta_norm(f.values, shift, m, p, f.grid.cell_volume)
        rows.append((o.k, o.axis, o.length, v / o.length ** s))
    return rows


def besov_seminorm(f: GridFunction, p: float, q: float, s: float, m: int,
                   offsets=None) -> float:
    """Discretised [f]_{B^s_{p,q}} on dyadic axis-aligned offsets.

    q = inf takes the max over offsets. Finite q treats each dyadic shell as
    carrying measure log 2 in dh/|h|^d, times the sphere area, with the
    direction average taken over the coordinate axes.
    """
    rows = shell_values(f, p, s, m, offsets)
    vals = np.array([r[3] for r in rows])
    if np.isinf(q):
        return float(vals.max())
    if q <= 0:
        raise UsageError("q must be > 0")
    by_k = {}
    for k, _, _, v in rows:
        by_k.setdefault(k, []).append(v ** q)
    total = sum(LN2 * sphere_area(f.grid.dim) * np.mean(v) for v in by_k.values())
    return float(total ** (1.0 / q))


def holder_estimate(f: GridFunction, s: float, m: int, offsets=None) -> float:
    """||f||_inf + max over dyadic offsets of ||Delta_h^m f||_inf / |h|^s."""
    return float(np.max(np.abs(f.values)) + besov_seminorm(f, np.inf, np.inf, s, m, offsets))


def spectral_derivative(f: GridFunction, order: int, axis: int = 0) -> GridFunction:
    """Directional derivative of order ``order`` by FFT on a 2x zero-padded box."""
    g = f.grid
    n = g.cells
    a = np.pad(f.values, [(n // 2, n // 2)] * g.dim)
    xi = 2.0 * np.pi * sfft.fftfreq(2 * n, d=g.cell_width)
    shape = [1] * g.dim
    shape[axis] = 2 * n
    mult = (1j * xi.reshape(shape)) ** order
    if order % 2 == 1:
        # the Nyquist mode has no well-defined odd derivative
        sl = [slice(None)] * g.dim
        sl[axis] = n
        mult = mult.copy()
        mult[tuple(sl)] = 0.0
    d = np.real(sfft.ifftn(sfft.fftn(a) * mult))
    crop = tuple(slice(n // 2, n // 2 + n) for _ in range(g.dim))
    return GridFunction(g, d[crop], {"derivative": order, "axis": axis})


def difference_ratio(f: GridFunction, h: float, m: int, derivative=None,
                     axis: int = 0) -> float:
    """||Delta_h^m f||_1 / (|h|^m ||d^m f||_1); at most 1 for smooth f."""
    shift = [0] * f.grid.dim
    shift[axis] = _shift_cells(f.grid, [h if i == axis else 0.0
                                         for i in range(f.grid.dim)])[axis]
    num = _padded_delta_norm(f.values, tuple(shift), m, 1, f.grid.cell_volume)
    d = derivative if derivative is not None else spectral_derivative(f, m, axis)
    den = abs(h) ** m * lp_norm(np.asarray(getattr(d, "values", d)), f.grid.cell_volume, 1)
    return float(num / den)


# ---------------------------------------------------------------- Littlewood-Paley

def _g(u):
    out = np.zeros_like(u, dtype=float)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def cutoff(r):
    """Smooth chi(r): 1 on [0, 1], 0 on [2, inf), monotone in between."""
    r = np.asarray(r, dtype=float)
    a = _g(2.0 - r)
    b = _g(r - 1.0)
    return a / (a + b)


def block_multipliers(xi_abs: np.ndarray, levels: int) -> list:
    """phi_0 = chi(|xi|), phi_n = chi(2^-n |xi|) - chi(2^(1-n) |xi|) for n = 1..levels."""
    prev = cutoff(xi_abs)
    out = [prev]
    for n in range(1, levels + 1):
        cur = cutoff(xi_abs * 2.0 ** -n)
        out.append(cur - prev)
        prev = cur
    return out


def max_levels(grid: Grid) -> int:
    """Largest J with 2^(J+2) < pi / cell_width."""
    lim = np.pi / grid.cell_width
    J = int(np.floor(np.log2(lim))) - 2
    while 2.0 ** (J + 2) >= lim:
        J -= 1
    return J


@dataclass
class LPDecomposition:
    grid: Grid                 # 2x padded grid the blocks live on
    source: Grid
    blocks: list               # arrays f_0 .. f_J
    remainder: np.ndarray      # f - sum of blocks (frequencies above 2^J)

    @property
    def levels(self) -> int:
        return len(self.blocks) - 1

    def norms(self, p: float) -> np.ndarray:
        return np.array([lp_norm(b, self.grid.cell_volume, p) for b in self.blocks])

    def reconstruct(self, include_remainder: bool = True) -> GridFunction:
        tot = np.sum(self.blocks, axis=0)
        if include_remainder:
            tot = tot + self.remainder
        return self.crop(tot)

    def crop(self, a: np.ndarray) -> GridFunction:
        n = self.source.cells
        sl = tuple(slice(n // 2, n // 2 + n) for _ in range(self.source.dim))
        return GridFunction(self.source, a[sl])

    def block(self, n: int) -> GridFunction:
        return GridFunction(self.grid, self.blocks[n], {"block": n})


def _freq_abs(grid: Grid) -> np.ndarray:
    xi = 2.0 * np.pi * sfft.fftfreq(grid.cells, d=grid.cell_width)
    if grid.dim == 1:
        return np.abs(xi)
    return np.hypot(xi[:, None], xi[None, :])


def edge_value(f: GridFunction) -> float:
    """Largest |f| on the outermost layer of cells, relative to max |f|."""
    a = np.abs(f.values)
    top = a.max()
    if top == 0:
        return 0.0
    edge = 0.0
    for axis in range(f.grid.dim):
        edge = max(edge, np.take(a, 0, axis=axis).max(), np.take(a, -1, axis=axis).max())
    return float(edge / top)


def check_edge(f: GridFunction, tol: float = EDGE_TOL):
    """Zero extension is only faithful when f has decayed at the box edge."""
    e = edge_value(f)
    if e > tol:
        raise UsageError(f"function is {e:.2e} (relative) at the box edge, above {tol:g}; "
                         "use a larger box")


def lp_decompose(f: GridFunction, levels: int | None = None,
                 edge_check: bool = True) -> LPDecomposition:
    """Littlewood-Paley blocks f_n = F^-1(phi_n F f), n = 0..levels."""
    if edge_check:
        check_edge(f)
    J = max_levels(f.grid) if levels is None else int(levels)
    jmax = max_levels(f.grid)
    if J > jmax:
        raise UsageError(f"levels={J} exceeds the Nyquist limit for cell width "
                         f"{f.grid.cell_width}: max J is {jmax}")
    if J < 0:
        raise UsageError("levels must be >= 0")
    big = f.grid.padded(2)
    a = f.pad_to(big).values
    fh = sfft.fftn(a)
    mult = block_multipliers(_freq_abs(big), J)
    blocks = [np.real(sfft.ifftn(fh * phi)) for phi in mult]
    rem = a - np.sum(blocks, axis=0)
    return LPDecomposition(big, f.grid, blocks, rem)


def partition_error(grid: Grid, levels: int) -> float:
    """max |sum_n phi_n - 1| over frequencies |xi| <= 2^levels."""
    xi = _freq_abs(grid.padded(2))
    tot = np.sum(block_multipliers(xi, levels), axis=0)
    band = xi <= 2.0 ** levels
    return float(np.max(np.abs(tot[band] - 1.0)))


@dataclass
class IndexFit:
    value: float
    capped: bool
    window: tuple
    residual: float
    stderr: float
    norms: list = field(default_factory=list)
    resolved: int = 0              # blocks of the window used (above the floor)
    lower_slope: float = float("nan")  # slope over resolved blocks when capped

    def __str__(self):
        if self.capped:
            return f">= {self.value:g} (cap)"
        return f"{self.value:.3f} +/- {self.stderr:.3f}"


def _ols(n, y):
    A = np.vstack([n, np.ones_like(n)]).T.astype(float)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(1, n.size - 2)
    stderr = float(np.sqrt(float(resid @ resid) / dof / np.sum((n - n.mean()) ** 2)))
    return float(coef[0]), float(np.sqrt(np.mean(resid ** 2))), stderr


def regularity_index(blocks, p: float = 1, window=None, cap: float = INDEX_CAP,
                     floor: float = FLOOR, noise=None, noise_factor: float = 2.0) -> IndexFit:
    """Least-squares slope of -log2 ||f_n||_p against n over the fit window.

    ``blocks`` is an LPDecomposition or a sequence of block norms. The
    default window drops the two coarsest blocks and the finest one.

    A block is resolved while its norm exceeds ``floor`` and, when a per-block
    ``noise`` level is given (e.g. from a half-sample split), ``noise_factor``
    times that level. The fit runs over the resolved prefix of the window.
    With fewer than 4 resolved blocks the function decays faster than the
    data can show and the result is capped; ``lower_slope`` then holds the
    slope over the resolved blocks (if at least 2).
    """
    norms = blocks.norms(p) if isinstance(blocks, LPDecomposition) else np.asarray(blocks, float)
    J = len(norms) - 1
    lo, hi = window if window is not None else (2, J - 1)
    lo, hi = max(0, int(lo)), min(J, int(hi))
    n = np.arange(lo, hi + 1)
    if n.size < 4:
        raise InsufficientBlocksError(
            f"fit window [{lo}, {hi}] holds {n.size} blocks; need >= 4 (use a finer grid)")
    v = norms[lo:hi + 1]
    lim = np.full(v.shape, floor)
    if noise is not None:
        lim = np.maximum(lim, noise_factor * np.asarray(noise, float)[lo:hi + 1])
    ok = v > lim
    k = int(np.argmin(ok)) if not ok.all() else ok.size
    if k < 4:
        lower = _ols(n[:k], -np.log2(v[:k]))[0] if k >= 2 else float("nan")
        return IndexFit(cap, True, (lo, hi), float("nan"), float("nan"), norms.tolist(), k,
                        lower)
    slope, rms, stderr = _ols(n[:k], -np.log2(v[:k]))
    used = (lo, lo + k - 1)
    if slope >= cap:
        return IndexFit(cap, True, used, rms, stderr, norms.tolist(), k, slope)
    return IndexFit(slope, False, used, rms, stderr, norms.tolist(), k)


# ---------------------------------------------------------------- kink statistic

def _kappa(u):
    """Jump response of |x|/2-type kinks after Gaussian smoothing (u = r / h)."""
    u = np.asarray(u, dtype=float)
    phi = np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi)
    return special.erf(u / np.sqrt(2)) + 2.0 * (phi - 1.0 / np.sqrt(2 * np.pi)) / u


def _value_at_kink(f: GridFunction, x0: float) -> float:
    """f(x0) from one-sided linear extrapolation, averaged over both sides.

    Interpolating across a kink that sits between two cell centres biases
    f(x0); extrapolating each side from its own two nearest centres does not.
    """
    c, v = f.grid.centers(), f.values
    i = int(np.searchsorted(c, x0))
    if i < c.size and c[i] == x0:
        return float(v[i])
    if i < 2 or i > c.size - 2:
        return float(f.at(x0))
    w = f.grid.cell_width
    right = v[i] - (v[i + 1] - v[i]) / w * (c[i] - x0)
    left = v[i - 1] + (v[i - 1] - v[i - 2]) / w * (x0 - c[i - 1])
    return float(0.5 * (left + right))


def symmetric_slope_gap(f, x0: float, r: float) -> float:
    """s+(r) - s-(r) = (f(x0 + r) + f(x0 - r) - 2 f(x0)) / r."""
    if isinstance(f, GridFunction):
        side = np.asarray(f.at(np.array([x0 - r, x0 + r])), dtype=float)
        vals = np.array([side[0], _value_at_kink(f, x0), side[1]])
    else:
        vals = np.asarray(f(np.array([x0 - r, x0, x0 + r])), dtype=float).ravel()
    return float((vals[0] + vals[2] - 2.0 * vals[1]) / r)


def kink_statistic(f, x0: float, scales, smoothing: float = 0.0) -> float:
    """Extrapolated jump |f'(x0+) - f'(x0-)| from one-sided slopes.

    ``f`` is a 1-d GridFunction (linearly interpolated) or a callable.
    With smoothing = 0 the two finest scales are combined by Richardson
    extrapolation, gap(r) = J + c r. When f is known to be a Gaussian
    smoothing of width ``smoothing`` of a kinked function, the smoothed
    response gap(r) = J kappa(r/h) + c r is solved instead, which removes
    the bias of a kernel estimate.
    """
    scales = sorted(float(r) for r in scales)
    if len(scales) < 2:
        raise UsageError("kink_statistic needs at least two scales")
    r1, r2 = scales[0], scales[1]
    g1 = symmetric_slope_gap(f, x0, r1)
    g2 = symmetric_slope_gap(f, x0, r2)
    if smoothing > 0:
        k1, k2 = _kappa(r1 / smoothing), _kappa(r2 / smoothing)
    else:
        k1 = k2 = 1.0
    A = np.array([[k1, r1], [k2, r2]])
    J, _ = np.linalg.solve(A, np.array([g1, g2]))
    return float(abs(J))


# ---------------------------------------------------------------- convolution check

def convolve(f: GridFunction, g: GridFunction) -> GridFunction:
    """(f * g) on f's grid; zero extension outside the box."""
    from scipy import signal

    if f.grid != g.grid:
        raise UsageError("convolution needs identical grids")
    # a sum of two cell centres is a cell edge: average the two edges around each centre
    full = signal.fftconvolve(f.values, g.values, mode="full") * f.grid.cell_volume
    n = f.grid.cells
    full = np.pad(full, [(0, 1)] * f.grid.dim)
    c = full
    for axis in range(f.grid.dim):
        lo = np.take(c, np.arange(n // 2 - 1, n // 2 - 1 + n), axis=axis)
        hi = np.take(c, np.arange(n // 2, n // 2 + n), axis=axis)
        c = 0.5 * (lo + hi)
    return GridFunction(f.grid, c)


def besov_inf_norm(norms, s: float) -> float:
    n = np.arange(len(norms))
    return float(np.max(2.0 ** (n * s) * np.asarray(norms)))


@dataclass
class ConvolutionReport:
    ratio: float
    level_ratios: list
    conv_norms: list
    f_norms: list
    g_norms: list


def convolution_bound_check(f: GridFunction, g: GridFunction, gamma: float, delta: float,
                            ell: float, ell1: float, ell2: float,
                            levels: int | None = None) -> ConvolutionReport:
    """Compare ||f*g||_{B^gamma_{ell,inf}} with ||f||_{B^{gamma-delta}_{ell1,inf}} ||g||_{B^delta_{ell2,inf}}.

    Norms are the block-norm sup sum over Littlewood-Paley blocks. The
    per-level ratios 2^{n gamma}||(f*g)_n|| / (product of the norms) are
    reported too; they should stay bounded.
    """
    inv = lambda v: 0.0 if np.isinf(v) else 1.0 / v
    if abs(1.0 + inv(ell) - inv(ell1) - inv(ell2)) > 1e-12:
        raise UsageError("exponents must satisfy 1 + 1/ell = 1/ell1 + 1/ell2")
    fg = convolve(f, g)
    J = max_levels(f.grid) if levels is None else levels
    cn = lp_decompose(fg, J).norms(ell)
    fn = lp_decompose(f, J).norms(ell1)
    gn = lp_decompose(g, J).norms(ell2)
    denom = besov_inf_norm(fn, gamma - delta) * besov_inf_norm(gn, delta)
    n = np.arange(J + 1)
    if denom == 0:
        lvl = np.zeros(J + 1)
        ratio = 0.0
    else:
        lvl = 2.0 ** (n * gamma) * cn / denom
        ratio = besov_inf_norm(cn, gamma) / denom
    return ConvolutionReport(float(ratio), lvl.tolist(), cn.tolist(), fn.tolist(), gn.tolist())


# ---------------------------------------------------------------- reference functions

def reference_function(name: str, grid: Grid) -> GridFunction:
    """Calibration functions with known smoothness: hat, indicator, gaussian, abs."""
    if name == "hat":
        fn = lambda x: np.maximum(0.0, 1.0 - np.abs(x))
    elif name == "indicator":
        fn = lambda x: (np.abs(x) < 1.0).astype(float)
    elif name == "gaussian":
        fn = lambda x: np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)
    elif name == "abs":
        # |x| near 0, smoothly switched off before the box edge
        L = grid.half_width

        def fn(x):
            r = np.abs(x)
            return r * cutoff(4.0 * r / L)
    else:
        raise UsageError(f"unknown reference function {name!r}")
    if grid.dim == 1:
        return GridFunction.from_callable(grid, fn, name=name)
    return GridFunction.from_callable(grid, lambda x: np.prod(fn(x), axis=-1), name=name)


# ---------------------------------------------------------------- reports

@dataclass
class RegularityReport:
    seminorms: list = field(default_factory=list)   # dicts p, q, s, m, value
    lp_blocks: list = field(default_factory=list)   # (n, norm)
    block_p: float = 1.0
    fitted_index: IndexFit | None = None
    kink_stats: list = field(default_factory=list)  # dicts location, value
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "seminorms": self.seminorms,
            "lp_blocks": [{"n": int(n), "lp_norm": float(v)} for n, v in self.lp_blocks],
            "block_p": _jsonable(self.block_p),
            "fitted_index": None if self.fitted_index is None else
            {k: _jsonable(v) for k, v in asdict(self.fitted_index).items()},
            "kink_stats": self.kink_stats,
            "meta": self.meta,
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """Rows n, lp_norm, level_value with level_value = -log2(lp_norm)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "lp_norm", "level_value"])
        for n, v in self.lp_blocks:
            lv = -np.log2(v) if v > 0 else float("inf")
            w.writerow([int(n), repr(float(v)), repr(float(lv))])
        return buf.getvalue()


def _jsonable(v):
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def analyze(f: GridFunction, p: float = 1, levels: int | None = None, window=None,
            seminorm_params=(), kink_at=(), kink_scales=(), smoothing: float = 0.0,
            noise: GridFunction | None = None, **meta) -> RegularityReport:
    """Bundle block norms, fitted index, seminorms and kink statistics.

    ``noise`` is an estimate of the Monte-Carlo error of ``f`` (for instance
    density.half_sample_difference); its block norms set the resolution floor
    of the index fit.
    """
    dec = lp_decompose(f, levels)
    norms = dec.norms(p)
    noise_norms = None
    if noise is not None:
        noise_norms = lp_decompose(noise, dec.levels, edge_check=False).norms(p)
    try:
        fit = regularity_index(norms, p, window, noise=noise_norms)
    except InsufficientBlocksError:
        fit = None
    sem = []
    for (pp, q, s, m) in seminorm_params:
        sem.append({"p": _jsonable(float(pp)), "q": _jsonable(float(q)), "s": s, "m": m,
                    "value": besov_seminorm(f, pp, q, s, m)})
    kinks = []
    if kink_at:
        for x0 in kink_at:
            kinks.append({"location": x0,
                          "value": kink_statistic(f, x0, kink_scales, smoothing)})
    return RegularityReport(sem, list(enumerate(norms.tolist())), p, fit, kinks, meta)
