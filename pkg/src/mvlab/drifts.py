"""Named external drift functions V(t, x) for plain SDEs dX = V(t, X) dt + dW.

Each drift acts on positions of shape (N, d) and returns (N, d). Drifts with a
known spatial gradient expose ``grad(t, x)`` returning (N, d, d); the
linearization of order 2 and the Malliavin module require it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import kernels as K
from .errors import UsageError


@dataclass(frozen=True)
class Drift:
    name: str
    func: Callable
    grad: Optional[Callable] = None
    bound: float = np.inf        # sup |V|
    grad_bound: float = np.inf   # sup |DV|
    params: tuple = ()

    def __call__(self, t, x):
        return self.func(t, x)

    def gradient(self, t, x):
        if self.grad is None:
            raise UsageError(f"drift {self.name!r} has no gradient")
        return self.grad(t, x)

    def to_config(self) -> dict:
        return {"name": self.name, **dict(self.params)}


def _diag(g):
    """(N, d) elementwise derivatives -> (N, d, d) diagonal Jacobians."""
    n, d = g.shape
    out = np.zeros((n, d, d))
    idx = np.arange(d)
    out[:, idx, idx] = g
    return out


def zero() -> Drift:
    return Drift("zero", lambda t, x: np.zeros_like(x), lambda t, x: _diag(np.zeros_like(x)),
                 0.0, 0.0)


def constant(c) -> Drift:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return Drift("constant", lambda t, x: np.broadcast_to(c, x.shape).copy(),
                 lambda t, x: _diag(np.zeros_like(x)), float(np.max(np.abs(c))), 0.0,
                 (("c", c.tolist() if c.size > 1 else float(c[0])),))


def sign() -> Drift:
    """V(x) = -sign(x) componentwise, sign(0) = 0."""
    return Drift("sign", lambda t, x: -np.sign(x), None, 1.0, np.inf)


def linear(rate: float) -> Drift:
    """V(x) = rate * x; rate = -lambda gives the Ornstein-Uhlenbeck drift."""
    return Drift("linear", lambda t, x: rate * x,
                 lambda t, x: _diag(np.full_like(x, rate)), np.inf, abs(rate),
                 (("rate", rate),))


def tanh(scale: float = 1.0) -> Drift:
    """V(x) = -tanh(x / scale): bounded, smooth, gradient bounded by 1/scale."""
    return Drift("tanh", lambda t, x: -np.tanh(x / scale),
                 lambda t, x: _diag(-1.0 / (scale * np.cosh(x / scale) ** 2)),
                 1.0, 1.0 / scale, (("scale", scale),))


def kernel_drift(kernel: K.KernelSpec) -> Drift:
    """Use an interaction kernel itself as a plain drift V = b."""
    def func(t, x):
        return K.evaluate(kernel, x)

    grad = None
    gb = np.inf
    if kernel.dim == 1 and kernel.kind in ("smooth", "mollified", "zero"):
        def grad(t, x):
            return _diag(K.gradient(kernel, x[:, 0])[:, None])
        if kernel.kind == "smooth":
            gb = 1.0 / kernel.scale
        elif kernel.kind == "mollified" and kernel.base.kind == "sign":
            gb = 2.0 * float(K.bump(0.0, kernel.delta, 1))
    bound = kernel.norm_bound if kernel.kind != "power" else kernel.cap
    return Drift(f"kernel:{kernel.label}", func, grad, bound, gb,
                 (("kernel", kernel.to_config()),))


def mollified_sign(delta: float) -> Drift:
    """V = -(sign * bump_delta): smooth, |V| <= 1, |V'| <= 2 bump_delta(0)."""
    d = kernel_drift(K.mollify(K.sign_kernel(1), delta))
    return Drift("mollified_sign", d.func, d.grad, 1.0, d.grad_bound, (("delta", delta),))


def frozen_field(values: np.ndarray, centers: np.ndarray) -> Drift:
    """Piecewise-linear 1-d drift from a gridded snapshot field (e.g. an MV drift)."""
    values = np.asarray(values, dtype=float).ravel()
    centers = np.asarray(centers, dtype=float).ravel()
    slopes = np.gradient(values, centers)

    def func(t, x):
        return np.interp(x[:, 0], centers, values)[:, None]

    def grad(t, x):
        return _diag(np.interp(x[:, 0], centers, slopes)[:, None])

    return Drift("frozen_field", func, grad, float(np.max(np.abs(values))),
                 float(np.max(np.abs(slopes))))


def schedule(base: Drift, weights: Callable[[float], float], name: str = "schedule") -> Drift:
    """Time-dependent drift w(t) * V(x), for L^q-in-time experiments."""
    grad = None
    if base.grad is not None:
        def grad(t, x):
            return weights(t) * base.grad(t, x)
    return Drift(name, lambda t, x: weights(t) * base.func(t, x), grad, np.inf, np.inf)


_REGISTRY = {
    "zero": zero,
    "constant": constant,
    "sign": sign,
    "linear": linear,
    "tanh": tanh,
    "mollified_sign": mollified_sign,
}


def by_name(name: str, **params) -> Drift:
    """Look up a named drift, e.g. by_name('linear', rate=-1.0)."""
    if name == "kernel":
        return kernel_drift(K.from_config(params["kernel"]))
    if name not in _REGISTRY:
        raise UsageError(f"unknown drift {name!r}; known: {sorted(_REGISTRY) + ['kernel']}")
    try:
        return _REGISTRY[name](**params)
    except TypeError as exc:
        raise UsageError(f"bad parameters for drift {name!r}: {exc}") from None


def from_config(cfg) -> Drift:
    if isinstance(cfg, str):
        return by_name(cfg)
    cfg = dict(cfg)
    return by_name(cfg.pop("name"), **cfg)
