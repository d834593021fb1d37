"""Closed-form reference densities for the test and acceptance suites.

The main object is the law at time t of dX = -sign(X) dt + dW started from a
point. From the origin its density is

    p0(t, y) = g_t(|y| + t) + exp(-2|y|) Q((|y| - t) / sqrt t),

with g_t the centred Gaussian density of variance t and Q the standard normal
upper tail. From x0 != 0 the path runs as a Brownian motion with unit drift
towards 0 until it first hits 0, then restarts from the origin.
"""
from __future__ import annotations

import numpy as np
from scipy import integrate, special

from .errors import UsageError
from .grid import Grid
from .density import GridDensity, from_oracle

SQRT2 = np.sqrt(2.0)
SQRT2PI = np.sqrt(2.0 * np.pi)


def _check_t(t):
    if not t > 0:
        raise UsageError("t must be > 0")


def normal_tail(z):
    """Q(z) = P(Z > z) via erfc, accurate far into the tail."""
    return 0.5 * special.erfc(np.asarray(z, dtype=float) / SQRT2)


def gaussian_density(mean, var, y):
    if not var > 0:
        raise UsageError("var must be > 0")
    y = np.asarray(y, dtype=float)
    return np.exp(-0.5 * (y - mean) ** 2 / var) / np.sqrt(2.0 * np.pi * var)


def ou_moments(lam: float, t: float, x0: float = 0.0):
    """Mean and variance of dX = -lam X dt + dW at time t."""
    if lam == 0:
        return x0, t
    return x0 * np.exp(-lam * t), -np.expm1(-2.0 * lam * t) / (2.0 * lam)


def ou_marginal(lam: float, t: float, x0: float, y):
    _check_t(t)
    m, v = ou_moments(lam, t, x0)
    return gaussian_density(m, v, y)


def sign_sde_density0(t: float, y):
    """Density at time t of dX = -sign(X) dt + dW, X_0 = 0."""
    _check_t(t)
    a = np.abs(np.asarray(y, dtype=float))
    st = np.sqrt(t)
    head = np.exp(-(a + t) ** 2 / (2.0 * t)) / (SQRT2PI * st)
    tail = np.exp(-2.0 * a) * normal_tail((a - t) / st)
    return head + tail


def sign_sde_density0_slope(t: float, y):
    """d/dy of sign_sde_density0 away from y = 0 (one-sided limits at 0)."""
    _check_t(t)
    y = np.asarray(y, dtype=float)
    a = np.abs(y)
    st = np.sqrt(t)
    head = np.exp(-(a + t) ** 2 / (2.0 * t)) / (SQRT2PI * st)
    tail = np.exp(-2.0 * a) * normal_tail((a - t) / st)
    # e^{-2a} g_t(a - t) = g_t(a + t), so the tail derivative reuses ``head``
    d_abs = -(a + t) / t * head - 2.0 * tail - head
    return np.where(y >= 0, d_abs, -d_abs)


def kink_jump(t: float) -> float:
    """Derivative jump p0'(0+) - p0'(0-) = -4 p0(t, 0)."""
    return float(2.0 * sign_sde_density0_slope(t, 0.0))


def fpt_density(x0: float, s):
    """First time Brownian motion with unit drift towards 0 hits 0 from x0."""
    if x0 == 0:
        raise UsageError("x0 must be nonzero")
    s = np.asarray(s, dtype=float)
    a = abs(x0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a / np.sqrt(2.0 * np.pi * s ** 3) * np.exp(-(a - s) ** 2 / (2.0 * s))
    return np.where(s > 0, out, 0.0)


def fpt_mode(x0: float) -> float:
    """Mode of the inverse-Gaussian law with mean |x0| and shape x0^2."""
    mu, lam = abs(x0), x0 * x0
    return mu * (np.sqrt(1.0 + 9.0 * mu * mu / (4.0 * lam * lam)) - 1.5 * mu / lam)


def _killed_part(t, x0, y):
    """Density of paths that have not yet reached 0 by time t."""
    y = np.asarray(y, dtype=float)
    sx = np.sign(x0)
    g = np.exp(-(sx * (x0 - y) - t) ** 2 / (2.0 * t)) / (SQRT2PI * np.sqrt(t))
    # the indicator counts y = 0 as same-side; the bracket vanishes there anyway
    same = x0 * y >= 0
    return np.where(same, g * -np.expm1(-2.0 * x0 * y / t), 0.0)


def _restart_part(t, x0, y):
    def integrand(u):
        # s = t - u^2 moves the 1/sqrt(t - s) behaviour at y = 0 to a bounded factor
        return 2.0 * u * sign_sde_density0(u * u, y) * fpt_density(x0, t - u * u)

    r = np.sqrt(t)
    brk = [p for p in (abs(y), np.sqrt(max(t - abs(x0), 0.0))) if 0 < p < r]
    val, _ = integrate.quad(integrand, 0.0, r, points=brk or None, limit=200,
                            epsabs=1e-12, epsrel=1e-10)
    return val


def sign_sde_density_x(t: float, x0: float, y):
    """Density at time t of dX = -sign(X) dt + dW, X_0 = x0 != 0."""
    _check_t(t)
    if x0 == 0:
        raise UsageError("x0 must be nonzero; use sign_sde_density0")
    y = np.asarray(y, dtype=float)
    flat = np.atleast_1d(y).ravel()
    rest = np.array([_restart_part(t, x0, v) for v in flat])
    out = _killed_part(t, x0, flat) + rest
    return out.reshape(y.shape) if y.ndim else float(out[0])


def fokker_planck_residual(t: float, center: float = 1.0, width: float = 0.5,
                           dt: float = 1e-4) -> float:
    """|d/dt <p0, phi> - <p0, phi''/2 - sign phi'>| for a bump phi away from 0.

    The time derivative is a centred finite difference; the pairings use
    adaptive quadrature on the support of phi.
    """
    if abs(center) <= width:
        raise UsageError("test function support must avoid 0")

    def phi_parts(y):
        z = (y - center) / width
        inside = np.abs(z) < 1
        zz = np.where(inside, z, 0.0)
        q = 1.0 - zz * zz
        e = np.where(inside, np.exp(-1.0 / q), 0.0)
        # derivatives of exp(-1/(1-z^2)) in z
        d1 = e * (-2.0 * zz / q ** 2)
        d2 = e * ((2.0 * zz / q ** 2) ** 2 - (2.0 / q ** 2 + 8.0 * zz * zz / q ** 3))
        return e, d1 / width, d2 / width ** 2

    lo, hi = center - width, center + width

    def pair(tt, which):
        return integrate.quad(lambda y: sign_sde_density0(tt, y) * which(y), lo, hi,
                              epsabs=1e-14, epsrel=1e-12, limit=200)[0]

    phi = lambda y: phi_parts(y)[0]
    gen = lambda y: 0.5 * phi_parts(y)[2] - np.sign(y) * phi_parts(y)[1]
    lhs = (pair(t + dt, phi) - pair(t - dt, phi)) / (2.0 * dt)
    return abs(lhs - pair(t, gen))


def density_on_grid(grid: Grid, kind: str, **params) -> GridDensity:
    """Emit a named closed-form density onto ``grid`` (1-d)."""
    if grid.dim != 1:
        raise UsageError("oracle densities are 1-d")
    makers = {
        "sign0": lambda y: sign_sde_density0(params["t"], y),
        "signx": lambda y: sign_sde_density_x(params["t"], params["x0"], y),
        "gaussian": lambda y: gaussian_density(params.get("mean", 0.0), params["var"], y),
        "ou": lambda y: ou_marginal(params["lam"], params["t"], params.get("x0", 0.0), y),
    }
    if kind not in makers:
        raise UsageError(f"unknown oracle {kind!r}; known: {sorted(makers)}")
    return from_oracle(grid, makers[kind], oracle=kind, **params)
