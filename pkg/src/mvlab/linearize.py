"""Coupled linearization processes and the scaling checks built on them.

For a plain SDE dX = a(X) dt + dW and a window [t - eps, t], the processes

    order 0:  Y_t = X_{t-eps} + W_t - W_{t-eps}
    order 1:  Y_t = X_{t-eps} + eps a(X_{t-eps}) + W_t - W_{t-eps}
    order 2:  Y_t = X_{t-eps} + int A_r dr + W_t - W_{t-eps},
              A_r = a(X_{t-eps}) + Da(X_{t-eps}) (W_r - W_{t-eps})

share the Brownian path with X. On the Euler grid the difference X_t - Y_t
is dt * sum_k (a(X_k) - A_k) over the window, so every epsilon is read off a
single simulated path.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .drifts import Drift
from .errors import UsageError
from .rng import STREAM_SAMPLES, CounterStream

CHUNK = 64


class BrownianLanes:
    """sqrt(dt) * N(0, I) increments per sample, keyed by (seed, sample, step)."""

    def __init__(self, seed: int, n: int, dim: int, dt: float, group: int = 1,
                 workers: int = 1, stream: int = STREAM_SAMPLES):
        self.stream = CounterStream(seed, stream, workers=workers)
        self.index = np.arange(n, dtype=np.uint64)
        self.dim = dim
        self.fine_dt = dt / group
        self.group = group
        self._k0 = None
        self._buf = None

    def _fill(self, k0):
        g, d = self.group, self.dim
        z = self.stream.normals(self.index, k0 * g * d, CHUNK * g * d)
        z = z.reshape(len(self.index), CHUNK, g, d).sum(axis=2)
        self._buf = math.sqrt(self.fine_dt) * z
        self._k0 = k0

    def __call__(self, k: int) -> np.ndarray:
        if self._k0 is None or not self._k0 <= k < self._k0 + CHUNK:
            self._fill(k - k % CHUNK)
        return self._buf[:, k - self._k0, :]


@dataclass
class LinearizationResult:
    order: int
    t: float
    epsilons: list
    ae_values: list
    ae_stderr: list
    fitted_slope: float
    slope_stderr: float
    sample_count: int
    dt: float
    drift: str = ""
    cov_ratio: list = field(default_factory=list)
    dt_check: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "ae_mean", "ae_stderr"])
        for e, m, s in zip(self.epsilons, self.ae_values, self.ae_stderr):
            w.writerow([repr(float(e)), repr(float(m)), repr(float(s))])
        return buf.getvalue()


def loglog_slope(x, y) -> tuple:
    """OLS slope of log2 y against log2 x with its standard error."""
    lx = np.log2(np.asarray(x, dtype=float))
    ly = np.log2(np.asarray(y, dtype=float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    r = ly - A @ coef
    dof = max(1, lx.size - 2)
    se = math.sqrt(float(r @ r) / dof / float(np.sum((lx - lx.mean()) ** 2)))
    return float(coef[0]), se


def _window_errors(order, drift, t, dt, eps_steps, m, dim, seed, x0, group, workers):
    """Per-sample |X_t - Y_t^eps| for each window length (in steps)."""
    n_steps = int(round(t / dt))
    kmax = max(eps_steps)
    noise = BrownianLanes(seed, m, dim, dt, group, workers)
    x = np.broadcast_to(np.asarray(x0, dtype=float), (m, dim)).copy()
    # record a(X_k), X_k and W_k over the last kmax steps
    a_hist = np.empty((kmax, m, dim))
    x_hist = np.empty((kmax + 1, m, dim))
    w_hist = np.empty((kmax + 1, m, dim))
    w = np.zeros((m, dim))
    start = n_steps - kmax
    for k in range(n_steps):
        tk = k * dt
        a = drift(tk, x)
        if k >= start:
            j = k - start
            a_hist[j] = a
            x_hist[j] = x
            w_hist[j] = w
        dw = noise(k)
        x = x + a * dt + dw
        w = w + dw
    x_hist[kmax] = x
    w_hist[kmax] = w

    errs, covs = [], []
    t0 = start * dt
    for ne in eps_steps:
        j0 = kmax - ne
        xs = x_hist[j0]
        bw = w_hist[kmax] - w_hist[j0]
        resid = a_hist[j0:]
        if order >= 1:
            # subtract inside the sum so a constant drift cancels exactly
            resid = resid - drift(t0 + j0 * dt, xs)[None]
        gauss = bw
        if order == 2:
            da = drift.gradient(t0 + j0 * dt, xs)                    # (m, d, d)
            dw = w_hist[j0:kmax] - w_hist[j0][None]
            lin = np.einsum("nij,knj->kni", da, dw)
            resid = resid - lin
            gauss = bw + lin.sum(axis=0) * dt
        diff = resid.sum(axis=0) * dt
        errs.append(np.linalg.norm(diff, axis=1))
        covs.append(float(np.mean(np.sum(gauss * gauss, axis=1)) / (dim * ne * dt)))
    return errs, covs


def run_linearization(order: int, drift: Drift, t: float, epsilons, samples: int,
                      seed: int = 0, dim: int = 1, x0=0.0, dt: float | None = None,
                      dt_check: bool = False, workers: int = 1) -> LinearizationResult:
    """Monte-Carlo AE = E|X_t - Y_t^eps| for each eps, with a coupled noise path.

    The Euler substep defaults to the largest dt <= min(eps)/50 dividing t.
    With ``dt_check`` the run is repeated at dt/2 on the same Brownian path
    (coarse increments are sums of fine ones) and the largest relative change
    of the AE values is stored.
    """
    if order not in (0, 1, 2):
        raise UsageError("order must be 0, 1 or 2")
    if order == 2 and drift.grad is None:
        raise UsageError(f"order 2 needs a drift gradient; {drift.name!r} has none")
    eps = np.asarray(sorted({float(e) for e in epsilons}, reverse=True))
    if eps.size < 2:
        raise UsageError("need at least two distinct epsilons")
    if np.any(eps <= 0) or eps[0] > t / 2:
        raise UsageError("epsilons must lie in (0, t/2]")
    if dt is None:
        dt = t / math.ceil(t / (eps[-1] / 50.0))
    n_eps = [int(round(e / dt)) for e in eps]
    if min(n_eps) < 1:
        raise UsageError("dt larger than the smallest epsilon")
    eff = [n * dt for n in n_eps]

    group = 2 if dt_check else 1
    errs, covs = _window_errors(order, drift, t, dt, n_eps, samples, dim, seed, x0,
                                group, workers)
    ae = [float(e.mean()) for e in errs]
    se = [float(e.std(ddof=1) / math.sqrt(samples)) for e in errs]
    change = None
    if dt_check:
        fine, _ = _window_errors(order, drift, t, dt / 2, [2 * n for n in n_eps], samples,
                                 dim, seed, x0, 1, workers)
        change = max(abs(float(f.mean()) - a) / a if a > 0 else float(f.mean() > 0)
                     for f, a in zip(fine, ae))
    if all(a > 0 for a in ae):
        slope, sse = loglog_slope(eff, ae)
    else:
        slope, sse = float("nan"), float("nan")
    return LinearizationResult(order, t, eff, ae, se, slope, sse, samples, dt, drift.name,
                               covs, change)


# ---------------------------------------------------------------- Gaussian PE bound

def gaussian_derivative_l1(m: int) -> float:
    """||d^m/dx^m rho_1||_1 for the standard normal density, by quadrature."""
    from scipy import integrate, special

    def integrand(u):
        # rho^(m)(u) = (-1)^m He_m(u) rho(u)
        return abs(special.eval_hermitenorm(m, u)) * math.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)

    roots = np.sort(np.roots(special.hermitenorm(m).coeffs).real) if m > 0 else []
    val, _ = integrate.quad(integrand, -40, 40, points=list(roots) or None, limit=400,
                            epsabs=1e-14)
    return float(val)


@dataclass
class PERow:
    m: int
    h: float
    epsilon: float
    delta_l1: float
    ratio: float


def gaussian_delta_l1(m: int, h: float, epsilon: float, points_per_sd: int = 512,
                      width: float = 14.0) -> float:
    """||Delta_h^m rho_eps||_1 by midpoint quadrature in the variable x / sqrt(eps).

    Working in standardized units makes (h, eps) and (2h, 4eps) produce the
    same sums up to rounding.
    """
    if not epsilon > 0:
        raise UsageError("epsilon must be > 0")
    if h == 0:
        return 0.0
    r = h / math.sqrt(epsilon)
    lo = -width - max(0.0, m * r)
    hi = width - min(0.0, m * r)
    n = int(math.ceil((hi - lo) * points_per_sd))
    du = (hi - lo) / n
    u = lo + (np.arange(n) + 0.5) * du
    acc = np.zeros(n)
    for j in range(m + 1):
        v = u + j * r
        acc += (-1) ** (m - j) * math.comb(m, j) * np.exp(-0.5 * v * v)
    return float(np.abs(acc).sum() * du / math.sqrt(2 * math.pi))


def pe_bound_check(m: int, h_list, epsilon: float) -> list:
    """Ratios ||Delta_h^m rho_eps||_1 / (|h| / sqrt(eps))^m for each h."""
    rows = []
    for h in h_list:
        d = gaussian_delta_l1(m, h, epsilon)
        scale = (abs(h) / math.sqrt(epsilon)) ** m
        rows.append(PERow(m, float(h), float(epsilon), d, d / scale if scale > 0 else 0.0))
    return rows


# ---------------------------------------------------------------- increment scaling

@dataclass
class IncrementScaling:
    lags: list
    values: list
    stderr: list
    exponent: float
    exponent_stderr: float
    moment: int


def increment_scaling(drift: Drift, t: float, lags, samples: int, seed: int = 0,
                      moment: int = 1, dim: int = 1, x0=0.0, dt: float = 1e-3,
                      fine_steps_per_lag: int = 4, workers: int = 1) -> IncrementScaling:
    """Fitted exponent of E|X_{t+tau} - X_t|^moment against tau.

    X is run to t with step dt, then continued on a finer grid resolving the
    smallest lag (fine_steps_per_lag substeps).
    """
    lags = np.asarray(sorted(float(v) for v in lags))
    if lags[0] <= 0 or lags[-1] >= 1:
        raise UsageError("lags must lie in (0, 1)")
    fine = lags[0] / fine_steps_per_lag
    lag_steps = np.round(lags / fine).astype(int)
    noise = BrownianLanes(seed, samples, dim, dt, 1, workers)
    x = np.broadcast_to(np.asarray(x0, dtype=float), (samples, dim)).copy()
    n_coarse = int(round(t / dt))
    for k in range(n_coarse):
        x = x + drift(k * dt, x) * dt + noise(k)
    fine_noise = BrownianLanes(seed, samples, dim, fine, 1, workers, stream=STREAM_SAMPLES + 16)
    xt = x.copy()
    vals, ses = [], []
    want = set(lag_steps.tolist())
    rec = {}
    for k in range(int(lag_steps[-1])):
        x = x + drift(t + k * fine, x) * fine + fine_noise(k)
        if k + 1 in want:
            d = np.linalg.norm(x - xt, axis=1) ** moment
            rec[k + 1] = (float(d.mean()), float(d.std(ddof=1) / math.sqrt(samples)))
    for s in lag_steps:
        vals.append(rec[int(s)][0])
        ses.append(rec[int(s)][1])
    eff = (lag_steps * fine).tolist()
    slope, se = loglog_slope(eff, vals)
    return IncrementScaling(eff, vals, ses, slope, se, moment)
