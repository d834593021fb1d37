"""Euler-Maruyama simulation of interacting particle systems and plain SDEs.

The particle system approximating the McKean-Vlasov equation is

    dX^i = (1/N) sum_j b(X^i - X^j) dt + dL^i,

where L is a Brownian motion or (in 1-d) a symmetric alpha-stable process.
The same loop drives plain SDEs dX = V(t, X) dt + dL with independent particles.

Noise for particle ``i`` at step ``k`` comes from the counter-based stream
keyed by ``(seed, i, k)`` (see :mod:`mvlab.rng`), so a run is a deterministic
function of its configuration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence, Union

import numpy as np
from scipy import fft as sfft

from . import kernels as K
from .drifts import Drift
from .errors import DomainEscapeError, SimulationBlowupError, UsageError
from .grid import Grid
from .rng import STREAM_INIT, STREAM_NOISE, CounterStream, numpy_generator

NOISE_CHUNK_STEPS = 32


@dataclass(frozen=True)
class SimConfig:
    n_particles: int
    dt: float
    t_end: float
    drift: Union[K.KernelSpec, Drift]
    dim: int = 1
    seed: int = 0
    driver: str = "brownian"
    alpha: float | None = None
    backend: str = "direct"
    grid: Grid | None = None
    snapshot_times: tuple = ()
    workers: int = 1

    def __post_init__(self):
        if self.n_particles < 1:
            raise UsageError("n_particles must be >= 1")
        if self.dim not in (1, 2):
            raise UsageError("dim must be 1 or 2")
        if not self.dt > 0:
            raise UsageError("dt must be > 0")
        if not self.t_end >= self.dt * (1 - 1e-12):
            raise UsageError("t_end must be >= dt")
        if self.driver not in ("brownian", "stable"):
            raise UsageError(f"unknown driver {self.driver!r}")
        if self.driver == "stable":
            if self.dim != 1:
                raise UsageError("the stable driver is only available in dim = 1")
            if self.alpha is None or not 1 < self.alpha < 2:
                raise UsageError("stable driver needs alpha in (1, 2)")
        if self.backend not in ("direct", "fft"):
            raise UsageError(f"unknown backend {self.backend!r}")
        if self.backend == "fft":
            if self.grid is None:
                raise UsageError("fft backend needs a grid")
            if self.grid.dim != self.dim:
                raise UsageError("grid dim does not match simulation dim")
        if isinstance(self.drift, K.KernelSpec) and self.drift.dim != self.dim:
            raise UsageError("kernel dim does not match simulation dim")
        times = tuple(float(t) for t in self.snapshot_times) or (float(self.t_end),)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise UsageError("snapshot_times must be strictly increasing")
        for t in times:
            if t < 0 or t > self.t_end * (1 + 1e-12):
                raise UsageError(f"snapshot time {t} outside [0, t_end]")
            k = t / self.dt
            if abs(k - round(k)) > 1e-6:
                raise UsageError(f"snapshot time {t} is not a multiple of dt")
        object.__setattr__(self, "snapshot_times", times)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def meanfield(self) -> bool:
        return isinstance(self.drift, K.KernelSpec)

    def to_dict(self) -> dict:
        d = {
            "n_particles": self.n_particles, "dim": self.dim, "dt": self.dt,
            "t_end": self.t_end, "seed": self.seed,
            "driver": {"type": self.driver} if self.driver == "brownian"
            else {"type": "stable", "alpha": self.alpha},
            "backend": {"type": "direct"} if self.backend == "direct"
            else {"type": "fft", "half_width": self.grid.half_width, "cells": self.grid.cells},
            "snapshot_times": list(self.snapshot_times),
        }
        if self.meanfield:
            d["drift"] = {"type": "meanfield", "kernel": self.drift.to_config()}
        else:
            d["drift"] = {"type": "external", **self.drift.to_config()}
        return d


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    time: float = 0.0
    step_index: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None]


@dataclass
class PathRecord:
    times: list
    snapshots: list
    noise_totals: np.ndarray
    initial: np.ndarray
    config: SimConfig
    meta: dict = field(default_factory=dict)

    def snapshot(self, t: float) -> np.ndarray:
        for s, x in zip(self.times, self.snapshots):
            if math.isclose(s, t, rel_tol=1e-9, abs_tol=1e-12):
                return x
        raise KeyError(f"no snapshot at t={t}")

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]


# ---------------------------------------------------------------------------
# mean-field drift


def meanfield_drift_direct(positions: np.ndarray, kernel: K.KernelSpec,
                           chunk_elems: int = 1 << 21) -> np.ndarray:
    """Exact (1/N) sum_j b(x_i - x_j), including the self term b(0).

    The 1-d sign kernel is summed by ranks: b(x_i - x_j) = -sign(x_i - x_j),
    so the sum is (#{x_j > x_i} - #{x_j < x_i}) / N, with ties giving 0.
    """
    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if d != kernel.dim:
        raise UsageError(f"positions have dim {d}, kernel has dim {kernel.dim}")
    out = np.empty_like(x)
    if kernel.kind == "zero":
        out[:] = 0.0
        return out
    if kernel.kind == "sign" and d == 1:
        order = np.argsort(x[:, 0])
        srt = x[order, 0]
        pos = np.arange(n)
        # first and last index of each run of equal values
        first = np.r_[True, srt[1:] != srt[:-1]]
        last = np.r_[srt[1:] != srt[:-1], True]
        below = np.maximum.accumulate(np.where(first, pos, 0))
        upto = np.minimum.accumulate(np.where(last, pos, n - 1)[::-1])[::-1]
        out[order, 0] = ((n - 1 - upto) - below) / n
        return out
    rows = max(1, chunk_elems // n)
    for i0 in range(0, n, rows):
        xi = x[i0:i0 + rows]
        diff = xi[:, None, :] - x[None, :, :]
        if d == 1:
            vals = K.evaluate_scalar(kernel, diff[..., 0])[..., None]
        else:
            vals = K.evaluate(kernel, diff)
        out[i0:i0 + rows] = vals.sum(axis=1) / n
    return out


@lru_cache(maxsize=32)
def _stencil_spectrum(kernel: K.KernelSpec, grid: Grid):
    m = grid.cells + 2  # one guard cell each side
    half = m - 1
    stencil = K.lattice_stencil(kernel, grid.cell_width, half)  # (2m-1,)*d + (d,)
    nfft = sfft.next_fast_len(3 * m - 2, real=True)
    axes = tuple(range(grid.dim))
    spec = [sfft.rfftn(stencil[..., c], s=(nfft,) * grid.dim, axes=axes)
            for c in range(grid.dim)]
    return spec, nfft, half


def _check_inside(x: np.ndarray, grid: Grid, time=None):
    L = grid.half_width
    bad = np.nonzero(np.any((x < -L) | (x >= L) | ~np.isfinite(x), axis=1))[0]
    if bad.size:
        shown = ", ".join(str(i) for i in bad[:5])
        raise DomainEscapeError(
            f"{bad.size} particle(s) outside the box [-{L}, {L}) at t={time}: "
            f"indices {shown}{'...' if bad.size > 5 else ''}; enlarge the grid box",
            bad, time)


def _cic_weights(x: np.ndarray, grid: Grid):
    """Per-axis lower guard-padded cell index and upper weight."""
    u = (x + grid.half_width) / grid.cell_width - 0.5
    i0 = np.floor(u)
    frac = u - i0
    return i0.astype(np.int64) + 1, frac


def meanfield_drift_fft(positions: np.ndarray, kernel: K.KernelSpec, grid: Grid,
                        time=None) -> np.ndarray:
    """Grid approximation of the mean-field drift.

    Cloud-in-cell deposit onto cell centres, zero-padded FFT (linear)
    convolution with the kernel sampled on lattice offsets, and cloud-in-cell
    interpolation back to the particles.
    """
    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if d != kernel.dim or grid.dim != d:
        raise UsageError("positions, kernel and grid dimensions must agree")
    _check_inside(x, grid, time)
    if kernel.kind == "zero":
        return np.zeros_like(x)
    m = grid.cells + 2
    idx, frac = _cic_weights(x, grid)
    spec, nfft, half = _stencil_spectrum(kernel, grid)
    axes = tuple(range(d))
    if d == 1:
        i = idx[:, 0]
        f = frac[:, 0]
        rho = (np.bincount(i, 1.0 - f, minlength=m) + np.bincount(i + 1, f, minlength=m)) / n
        rho_hat = sfft.rfft(rho, nfft)
        field_ = sfft.irfft(rho_hat * spec[0], nfft)[half:half + m]
        return ((1.0 - f) * field_[i] + f * field_[i + 1])[:, None]
    ix, iy = idx[:, 0], idx[:, 1]
    fx, fy = frac[:, 0], frac[:, 1]
    corners = [(0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
               (0, 1, (1 - fx) * fy), (1, 1, fx * fy)]
    rho = np.zeros(m * m)
    for ox, oy, w in corners:
        rho += np.bincount((ix + ox) * m + (iy + oy), w, minlength=m * m)
    rho = rho.reshape(m, m) / n
    rho_hat = sfft.rfftn(rho, s=(nfft, nfft), axes=axes)
    out = np.zeros_like(x)
    for c in range(2):
        fld = sfft.irfftn(rho_hat * spec[c], s=(nfft, nfft), axes=axes)[half:half + m,
                                                                         half:half + m]
        for ox, oy, w in corners:
            out[:, c] += w * fld[ix + ox, iy + oy]
    return out


def drift_vectors(ensemble: ParticleEnsemble, config: SimConfig) -> np.ndarray:
    x = ensemble.positions
    if not config.meanfield:
        return np.asarray(config.drift(ensemble.time, x), dtype=float).reshape(x.shape)
    if config.backend == "fft":
        return meanfield_drift_fft(x, config.drift, config.grid, ensemble.time)
    return meanfield_drift_direct(x, config.drift)


# ---------------------------------------------------------------------------
# noise


def cms_transform(alpha: float, u_angle, u_exp):
    """Chambers-Mallows-Stuck map from two uniforms to a standard symmetric alpha-stable variate.

    The variate has characteristic function exp(-|s|^alpha).
    """
    v = np.pi * (np.asarray(u_angle) - 0.5)
    w = -np.log(np.asarray(u_exp))
    return (np.sin(alpha * v) / np.cos(v) ** (1.0 / alpha)
            * (np.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha))


def sample_stable_increment(alpha: float, dt: float, rng: np.random.Generator, size=None):
    """dt^(1/alpha) S with S standard symmetric alpha-stable, alpha in (1, 2)."""
    if not 1 < alpha < 2:
        raise UsageError(f"alpha must lie in (1, 2), got {alpha}")
    if not dt > 0:
        raise UsageError("dt must be > 0")
    u1 = rng.random(size)
    u2 = 1.0 - rng.random(size)  # in (0, 1]
    return dt ** (1.0 / alpha) * cms_transform(alpha, u1, u2)


class NoiseSource:
    """Per-particle driver increments for step k, drawn in chunks of steps."""

    def __init__(self, config: SimConfig, chunk_steps: int = NOISE_CHUNK_STEPS):
        self.config = config
        self.stream = CounterStream(config.seed, STREAM_NOISE, workers=config.workers)
        self.index = np.arange(config.n_particles, dtype=np.uint64)
        self.chunk = chunk_steps
        self._start = None
        self._buf = None

    @property
    def lanes_per_step(self) -> int:
        return 2 if self.config.driver == "stable" else self.config.dim

    def _fill(self, k0: int):
        cfg = self.config
        per = self.lanes_per_step
        if cfg.driver == "brownian":
            z = self.stream.normals(self.index, k0 * per, self.chunk * per)
            self._buf = math.sqrt(cfg.dt) * z.reshape(cfg.n_particles, self.chunk, per)
        else:
            u = self.stream.uniforms(self.index, k0 * per, self.chunk * per)
            u = u.reshape(cfg.n_particles, self.chunk, 2)
            s = cms_transform(cfg.alpha, u[..., 0], u[..., 1])
            self._buf = (cfg.dt ** (1.0 / cfg.alpha) * s)[..., None]
        self._start = k0

    def increments(self, k: int) -> np.ndarray:
        if self._start is None or not self._start <= k < self._start + self.chunk:
            self._fill(k - k % self.chunk)
        return self._buf[:, k - self._start, :]


# ---------------------------------------------------------------------------
# stepping


def step(ensemble: ParticleEnsemble, config: SimConfig, drift: np.ndarray,
         increments: np.ndarray | None = None, noise: NoiseSource | None = None):
    """One Euler-Maruyama step; returns (new ensemble, increments used)."""
    if increments is None:
        noise = noise or NoiseSource(config)
        increments = noise.increments(ensemble.step_index)
    x = ensemble.positions + drift * config.dt + increments
    k = ensemble.step_index + 1
    t = k * config.dt
    bad = ~np.all(np.isfinite(x), axis=1)
    if bad.any():
        where = np.nonzero(bad)[0]
        raise SimulationBlowupError(
            f"non-finite position for {where.size} particle(s) at t={t} (first index {where[0]})",
            where, t)
    return ParticleEnsemble(x, t, k), increments


def sample_initial(spec, n: int, dim: int, seed: int) -> np.ndarray:
    """Initial positions from an array, a callable(rng, n, dim) or a config dict.

    Config forms: {"type": "dirac", "x0": 0.0}, {"type": "normal", "mean": m,
    "std": s}, {"type": "uniform", "low": a, "high": b}.
    """
    if spec is None:
        spec = {"type": "dirac", "x0": 0.0}
    if callable(spec):
        x = spec(numpy_generator(seed, STREAM_INIT), n, dim)
    elif isinstance(spec, dict):
        kind = spec.get("type", "dirac")
        rng = numpy_generator(seed, STREAM_INIT)
        if kind == "dirac":
            x = np.broadcast_to(np.asarray(spec.get("x0", 0.0), dtype=float), (n, dim)).copy()
        elif kind == "normal":
            x = spec.get("mean", 0.0) + spec.get("std", 1.0) * rng.standard_normal((n, dim))
        elif kind == "uniform":
            x = rng.uniform(spec.get("low", -1.0), spec.get("high", 1.0), (n, dim))
        else:
            raise UsageError(f"unknown initial law {kind!r}")
    else:
        x = np.asarray(spec, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape != (n, dim):
        raise UsageError(f"initial positions have shape {x.shape}, expected {(n, dim)}")
    return x


def simulate(config: SimConfig, initial=None, progress: Callable | None = None) -> PathRecord:
    """Run the Euler scheme to t_end, recording the requested snapshots."""
    x0 = sample_initial(initial, config.n_particles, config.dim, config.seed)
    ens = ParticleEnsemble(x0.copy(), 0.0, 0)
    noise = NoiseSource(config)
    totals = np.zeros_like(x0)
    wanted = {int(round(t / config.dt)): t for t in config.snapshot_times}
    times, snaps = [], []
    if 0 in wanted:
        times.append(0.0)
        snaps.append(x0.copy())
    for k in range(config.n_steps):
        drift = drift_vectors(ens, config)
        ens, inc = step(ens, config, drift, noise.increments(k))
        totals += inc
        if k + 1 in wanted:
            times.append(wanted[k + 1])
            snaps.append(ens.positions.copy())
        if progress is not None:
            progress(k + 1, config.n_steps)
    return PathRecord(times, snaps, totals, x0, config)


def simulate_plain(drift: Drift, config: SimConfig, initial=None) -> PathRecord:
    """Independent particles following dX = V(t, X) dt + dL."""
    if not isinstance(drift, Drift):
        raise UsageError("simulate_plain needs a named external Drift")
    return simulate(replace(config, drift=drift), initial)


def increment_scaling_exponent(lags, values) -> tuple:
    """Least-squares slope and intercept of log values against log lags."""
    lx = np.log(np.asarray(lags, dtype=float))
    ly = np.log(np.asarray(values, dtype=float))
    slope, icpt = np.polyfit(lx, ly, 1)
    return float(slope), float(icpt)
