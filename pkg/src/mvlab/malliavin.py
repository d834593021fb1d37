"""Malliavin derivatives of dX = a(X) dt + dW along simulated Euler paths.

D_s X_t solves the variational equation d/du D_s X_u = a'(u, X_u) D_s X_u
with D_s X_s = I. On the Euler grid t_k = k dt each step uses the implicit
midpoint (Crank-Nicolson) propagator

    M_k = (I - dt/2 A_k)^-1 (I + dt/2 A_k),   A_k = (a'(X_k) + a'(X_{k+1})) / 2,

so D_{t_j} X_{t_n} = M_{n-1} ... M_j. The Malliavin matrix is the trapezoid
sum of D_s X_t (D_s X_t)^T over the same grid.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .drifts import Drift
from .errors import UsageError
from .linearize import BrownianLanes
from .rng import STREAM_SAMPLES


def euler_paths(drift: Drift, t: float, dt: float, samples: int, seed: int = 0,
                dim: int = 1, x0=0.0, workers: int = 1) -> np.ndarray:
    """Euler paths of shape (n_steps + 1, samples, dim)."""
    n = int(round(t / dt))
    if abs(n * dt - t) > 1e-9 * t:
        raise UsageError("t must be a multiple of dt")
    noise = BrownianLanes(seed, samples, dim, dt, 1, workers, stream=STREAM_SAMPLES)
    out = np.empty((n + 1, samples, dim))
    x = np.broadcast_to(np.asarray(x0, dtype=float), (samples, dim)).copy()
    out[0] = x
    for k in range(n):
        x = x + drift(k * dt, x) * dt + noise(k)
        out[k + 1] = x
    return out


def _as_batch(path):
    p = np.asarray(path, dtype=float)
    if p.ndim == 1:
        p = p[:, None, None]
    elif p.ndim == 2:
        p = p[:, None, :]
    return p


def _jacobians(path, grad, dt):
    """a'(t_k, X_k) for every node: shape (n + 1, samples, d, d)."""
    return np.stack([grad(k * dt, path[k]) for k in range(path.shape[0])])


def step_propagators(path, grad, dt: float) -> np.ndarray:
    """Implicit-midpoint propagators M_k, shape (n, samples, d, d)."""
    J = _jacobians(path, grad, dt)
    A = 0.5 * (J[1:] + J[:-1])
    d = A.shape[-1]
    eye = np.eye(d)
    if d == 1:
        a = A[..., 0, 0]
        return ((1.0 + 0.5 * dt * a) / (1.0 - 0.5 * dt * a))[..., None, None]
    return np.linalg.solve(eye - 0.5 * dt * A, eye + 0.5 * dt * A)


def backward_sweep(props: np.ndarray) -> np.ndarray:
    """D_{t_k} X_{t_n} for k = 0..n from D_{t_n} X_{t_n} = I, shape (n + 1, samples, d, d)."""
    n, m, d, _ = props.shape
    out = np.empty((n + 1, m, d, d))
    out[n] = np.eye(d)
    for k in range(n - 1, -1, -1):
        out[k] = out[k + 1] @ props[k]
    return out


def _index_of(s, dt, n):
    k = int(round(s / dt))
    if abs(k * dt - s) > 1e-9 * max(1.0, abs(s)) or not 0 <= k <= n:
        raise UsageError(f"s={s} is not a node of the path grid")
    return k


def variational_derivative(path, drift_gradient, s: float, t: float, dt: float) -> np.ndarray:
    """D_s X_t along the given path(s); returns (d, d) or (samples, d, d)."""
    p = _as_batch(path)
    n = p.shape[0] - 1
    if not s < t:
        raise UsageError("need s < t")
    ks, kt = _index_of(s, dt, n), _index_of(t, dt, n)
    props = step_propagators(p[ks:kt + 1], lambda u, x: drift_gradient(u + ks * dt, x), dt)
    D = np.broadcast_to(np.eye(p.shape[2]), (p.shape[1],) + props.shape[2:]).copy()
    for k in range(props.shape[0]):
        D = props[k] @ D
    return D[0] if np.ndim(path) < 3 else D


def picard_series(path, drift_gradient, s: float, t: float, dt: float, m_max: int) -> np.ndarray:
    """Partial sums I + sum_{m <= M} K_m(s), M = 0..m_max.

    K_m(u) = int_u^t K_{m-1}(v) a'(v) dv (later times on the left), each by
    one backward cumulative trapezoid pass. Returns (m_max + 1, [samples,] d, d).
    """
    if m_max < 0:
        raise UsageError("m_max must be >= 0")
    p = _as_batch(path)
    n = p.shape[0] - 1
    ks, kt = _index_of(s, dt, n), _index_of(t, dt, n)
    J = _jacobians(p[ks:kt + 1], lambda u, x: drift_gradient(u + ks * dt, x), dt)
    nn, m, d, _ = J.shape
    K = np.broadcast_to(np.eye(d), (nn, m, d, d)).copy()
    sums = [K[0].copy()]
    total = K[0].copy()
    for _ in range(m_max):
        f = K @ J
        nxt = np.zeros_like(K)
        for k in range(nn - 2, -1, -1):
            nxt[k] = nxt[k + 1] + 0.5 * dt * (f[k] + f[k + 1])
        K = nxt
        total = total + K[0]
        sums.append(total.copy())
    out = np.stack(sums)
    return out[:, 0] if np.ndim(path) < 3 else out


def picard_budget(grad_bound: float, span: float, m_max: int) -> float:
    """Tail bound (M span)^(m+1) / (m+1)! of the series after m_max terms."""
    return (grad_bound * span) ** (m_max + 1) / math.factorial(m_max + 1)


def path_picard_budget(path, drift_gradient, s: float, t: float, dt: float,
                       m_max: int) -> np.ndarray:
    """Per-sample tail bound (int_s^t |a'| du)^(m+1) / (m+1)!, never above the M-based one."""
    p = _as_batch(path)
    n = p.shape[0] - 1
    ks, kt = _index_of(s, dt, n), _index_of(t, dt, n)
    J = _jacobians(p[ks:kt + 1], lambda u, x: drift_gradient(u + ks * dt, x), dt)
    mag = np.linalg.norm(J, ord=2, axis=(-2, -1)) if J.shape[-1] > 1 else np.abs(J[..., 0, 0])
    total = dt * (mag.sum(axis=0) - 0.5 * (mag[0] + mag[-1]))
    return total ** (m_max + 1) / math.factorial(m_max + 1)


def det_small(g: np.ndarray) -> np.ndarray:
    d = g.shape[-1]
    if d == 1:
        return g[..., 0, 0].copy()
    if d == 2:
        return g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]
    return np.linalg.det(g)


@dataclass
class MalliavinSample:
    s_grid: np.ndarray
    d_matrices: np.ndarray | None   # (n + 1, samples, d, d) or None when not kept
    gamma: np.ndarray               # (samples, d, d)
    det_gamma: np.ndarray           # (samples,)

    @property
    def min_eigenvalue(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.gamma)[..., 0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "det_gamma"])
        for i, v in enumerate(self.det_gamma):
            w.writerow([i, repr(float(v))])
        return buf.getvalue()


def _trapezoid_gram(D: np.ndarray, dt: float) -> np.ndarray:
    outer = D @ np.swapaxes(D, -1, -2)
    g = dt * (outer.sum(axis=0) - 0.5 * (outer[0] + outer[-1]))
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def malliavin_matrix(paths, drift_gradient, t: float, dt: float,
                     keep_derivatives: bool = False) -> MalliavinSample:
    """gamma = int_0^t D_s X_t (D_s X_t)^T ds on the path grid, symmetrised."""
    p = _as_batch(paths)
    n = int(round(t / dt))
    if p.shape[0] != n + 1:
        raise UsageError(f"paths have {p.shape[0]} nodes, expected t/dt + 1 = {n + 1}")
    D = backward_sweep(step_propagators(p, drift_gradient, dt))
    g = _trapezoid_gram(D, dt)
    return MalliavinSample(np.arange(n + 1) * dt, D if keep_derivatives else None, g,
                           det_small(g))


def streamed_gamma(drift: Drift, t: float, dt: float, samples: int, seed: int = 0,
                   dim: int = 1, x0=0.0, workers: int = 1) -> np.ndarray:
    """gamma per sample without storing paths.

    Uses D_s X_t = Phi_t Phi_s^-1 with Phi the forward product of the step
    propagators, so gamma = Phi_t (int Phi_s^-1 Phi_s^-T ds) Phi_t^T.
    """
    if drift.grad is None:
        raise UsageError(f"drift {drift.name!r} has no gradient")
    n = int(round(t / dt))
    noise = BrownianLanes(seed, samples, dim, dt, 1, workers, stream=STREAM_SAMPLES)
    eye = np.eye(dim)
    x = np.broadcast_to(np.asarray(x0, dtype=float), (samples, dim)).copy()
    inv = np.broadcast_to(eye, (samples, dim, dim)).copy()   # Phi_s^-1
    phi = inv.copy()
    acc = 0.5 * dt * (inv @ np.swapaxes(inv, -1, -2))
    J0 = drift.gradient(0.0, x)
    for k in range(n):
        x = x + drift(k * dt, x) * dt + noise(k)
        J1 = drift.gradient((k + 1) * dt, x)
        A = 0.5 * (J0 + J1)
        Mk = np.linalg.solve(eye - 0.5 * dt * A, eye + 0.5 * dt * A)
        Mk_inv = np.linalg.solve(eye + 0.5 * dt * A, eye - 0.5 * dt * A)
        phi = Mk @ phi
        inv = inv @ Mk_inv
        w = 0.5 * dt if k == n - 1 else dt
        acc = acc + w * (inv @ np.swapaxes(inv, -1, -2))
        J0 = J1
    g = phi @ acc @ np.swapaxes(phi, -1, -2)
    return 0.5 * (g + np.swapaxes(g, -1, -2))


@dataclass
class InverseMoment:
    p: float
    estimate: float
    halves: tuple
    relative_gap: float
    stable: bool
    flagged: bool
    n_samples: int
    min_det: float
    dets: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"p": self.p, "estimate": self.estimate, "halves": list(self.halves),
                "relative_gap": self.relative_gap, "stable": self.stable,
                "flagged": self.flagged, "n_samples": self.n_samples, "min_det": self.min_det}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _log_mean_pow(dets, p):
    """log E[det^-p] via log-sum-exp."""
    return float(logsumexp(-p * np.log(dets)) - math.log(dets.size))


def inverse_moment_estimate(drift: Drift, t: float, p: float, n_samples: int, seed: int = 0,
                            dt: float = 1e-3, dim: int = 1, x0=0.0,
                            workers: int = 1) -> InverseMoment:
    """Monte-Carlo E[(det gamma)^-p] with a two-halves stability diagnostic.

    ``stable`` means the halves agree within 10%; a gap above 25% sets
    ``flagged`` (reported, not raised).
    """
    if p < 1:
        raise UsageError("p must be >= 1")
    g = streamed_gamma(drift, t, dt, n_samples, seed, dim, x0, workers)
    dets = det_small(g)
    if np.any(dets <= 0):
        est = float("inf")
        return InverseMoment(p, est, (est, est), float("inf"), False, True, n_samples,
                             float(dets.min()), dets)
    est = math.exp(_log_mean_pow(dets, p))
    h = n_samples // 2
    a = math.exp(_log_mean_pow(dets[:h], p))
    b = math.exp(_log_mean_pow(dets[h:], p))
    gap = abs(a - b) / est
    return InverseMoment(p, est, (a, b), gap, gap <= 0.10, gap > 0.25, n_samples,
                         float(dets.min()), dets)


@dataclass
class LowerBoundRow:
    delta: float
    epsilon: float
    probability: float
    bound_shape: float


def lower_bound_check(drift: Drift, t: float, deltas, eps_fractions, n_samples: int,
                      seed: int = 0, dt: float = 1e-3, p: float = 2.0,
                      grad_bound: float | None = None) -> list:
    """Empirical P(||D X_t||^2 <= eps) next to the shape delta^p (delta/2 - eps)^-p.

    ||D X_t||^2 is the trace of gamma (1-d: gamma itself). Each eps is
    ``fraction * delta / 2`` so it stays below delta/2. Requires every
    delta < min(t, 1/(2M)).
    """
    M = drift.grad_bound if grad_bound is None else grad_bound
    g = streamed_gamma(drift, t, dt, n_samples, seed)
    norm2 = np.trace(g, axis1=-2, axis2=-1)
    rows = []
    for delta in deltas:
        if not (0 < delta < t and (M == 0 or delta < 1.0 / (2.0 * M))):
            raise UsageError(f"delta={delta} must lie in (0, min(t, 1/(2M)))")
        for f in eps_fractions:
            eps = f * delta / 2.0
            prob = float(np.mean(norm2 <= eps))
            rows.append(LowerBoundRow(float(delta), float(eps), prob,
                                      float(delta ** p * (delta / 2.0 - eps) ** -p)))
    return rows


def norm_tail_probability(gamma: np.ndarray, eps: float) -> float:
    """P(trace gamma <= eps) for a batch of Malliavin matrices."""
    return float(np.mean(np.trace(gamma, axis1=-2, axis2=-1) <= eps))
