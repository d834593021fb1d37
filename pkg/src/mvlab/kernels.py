"""Interaction kernels b for the convolution drift <b(x - .), mu_t>.

Every kernel in the catalogue is radial-odd, ``b(x) = -(x/|x|) g(|x|)`` with a
profile ``g >= 0``, and ``b(0) = 0``. The classes span the regularity ladder
from singular to smooth:

========== =========================================== ==============
class      profile g(r)                                regularity
========== =========================================== ==============
zero       0                                           C^inf
sign       1                                           L^inf
indicator  1{r <= R}                                   L^inf, L^p
holder     min(1, r^alpha)                             C^alpha
smooth     tanh(r / scale)                             C^inf_b
power      min(r^-a, cap) 1{r <= R}                    L^p for a p < d
mollified  (base * bump_delta)                         C^inf
========== =========================================== ==============

Mollified kernels are evaluated by Gauss-Legendre quadrature against a
compactly supported bump, with panels split at the base kernel's breakpoints
so that jumps and algebraic singularities are integrated accurately. The
1-d mollified sign kernel, used heavily as a smooth drift, instead reads the
bump's distribution function off a cubic Hermite table.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import integrate, interpolate

from .errors import UsageError
from .grid import Grid

KERNEL_CLASSES = ("zero", "sign", "indicator", "holder", "smooth", "power", "mollified")
BOUNDED_CLASSES = ("zero", "sign", "indicator", "holder", "smooth")

# quadrature layout for mollification (1-d)
_PANELS = 16
_NODES = 12
_GRADING = 24
_CDF_TABLE = 4096
# polar quadrature (2-d)
_RADIAL_PANELS = 8
_ANGLES = 64


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    dim: int = 1
    radius: float | None = None
    alpha: float | None = None
    scale: float | None = None
    a: float | None = None
    cutoff: float | None = None
    p: float | None = None
    cap: float | None = None
    delta: float | None = None
    base: "KernelSpec | None" = None
    norm_bound: float = 0.0
    odd: bool = True
    meta: tuple = field(default=(), compare=False)

    def __call__(self, x):
        return evaluate(self, x)

    @property
    def label(self) -> str:
        if self.kind == "mollified":
            return f"mollified({self.base.label},delta={self.delta:g})"
        params = {k: getattr(self, k) for k in ("radius", "alpha", "scale", "a", "cutoff", "p")
                  if getattr(self, k) is not None}
        inner = ",".join(f"{k}={v:g}" for k, v in params.items())
        return f"{self.kind}({inner})" if inner else self.kind

    def to_config(self) -> dict:
        cfg = {"class": self.kind}
        if self.dim != 1:
            cfg["dim"] = self.dim
        for k in ("radius", "alpha", "scale", "a", "cutoff", "p", "cap", "delta"):
            v = getattr(self, k)
            if v is not None:
                cfg[k] = v
        if self.base is not None:
            cfg["base"] = self.base.to_config()
        return cfg


def _check_dim(dim):
    if dim not in (1, 2):
        raise UsageError(f"kernel dim must be 1 or 2, got {dim}")


def zero_kernel(dim: int = 1) -> KernelSpec:
    _check_dim(dim)
    return KernelSpec("zero", dim, norm_bound=0.0)


def sign_kernel(dim: int = 1) -> KernelSpec:
    """b(x) = -x/|x| (in 1-d, -sign(x) with sign(0) = 0)."""
    _check_dim(dim)
    return KernelSpec("sign", dim, norm_bound=1.0)


def indicator_kernel(radius: float, dim: int = 1) -> KernelSpec:
    _check_dim(dim)
    if radius <= 0:
        raise UsageError("indicator radius must be > 0")
    return KernelSpec("indicator", dim, radius=float(radius), norm_bound=1.0)


def holder_kernel(alpha: float, dim: int = 1) -> KernelSpec:
    """b(x) = -(x/|x|) min(1, |x|^alpha).

    The odd extension of r^alpha is alpha-Holder with constant 2^(1-alpha) across
    the origin, which is the declared bound.
    """
    _check_dim(dim)
    if not 0 < alpha < 1:
        raise UsageError("holder alpha must lie in (0, 1)")
    return KernelSpec("holder", dim, alpha=float(alpha), norm_bound=2.0 ** (1 - alpha))


def smooth_kernel(scale: float = 1.0, dim: int = 1) -> KernelSpec:
    _check_dim(dim)
    if scale <= 0:
        raise UsageError("smooth kernel scale must be > 0")
    return KernelSpec("smooth", dim, scale=float(scale), norm_bound=1.0)


def power_kernel(a: float, cutoff: float = 1.0, p: float = 2.0, cap: float = 1e3,
                 dim: int = 1) -> KernelSpec:
    """Capped singular kernel -(x/|x|) min(|x|^-a, cap) 1{|x| <= cutoff}.

    ``p`` is the declared integrability index; the uncapped kernel lies in L^p
    iff a * p < dim, which is enforced. ``norm_bound`` is the uncapped L^p norm.
    """
    _check_dim(dim)
    if a <= 0 or cutoff <= 0 or cap <= 0 or p < 1:
        raise UsageError("power kernel needs a > 0, cutoff > 0, cap > 0, p >= 1")
    if a * p >= dim:
        raise UsageError(f"power kernel with a={a} is not in L^{p} (need a*p < {dim})")
    sphere = 2.0 if dim == 1 else 2.0 * math.pi
    lp = (sphere * cutoff ** (dim - a * p) / (dim - a * p)) ** (1.0 / p)
    return KernelSpec("power", dim, a=float(a), cutoff=float(cutoff), p=float(p),
                      cap=float(cap), norm_bound=lp)


def mollify(base: KernelSpec, delta: float) -> KernelSpec:
    """Return the mollification base * bump_delta."""
    if not delta > 0:
        raise UsageError(f"mollification width must be > 0, got {delta}")
    if base.kind == "zero":
        return base
    bound = base.norm_bound if base.kind in BOUNDED_CLASSES else _bounded_sup(base)
    return KernelSpec("mollified", base.dim, delta=float(delta), base=base,
                      norm_bound=bound, odd=base.odd)


def _bounded_sup(base: KernelSpec) -> float:
    if base.kind == "power":
        return base.cap
    return base.norm_bound


def from_config(cfg: dict) -> KernelSpec:
    """Build a kernel from its config form, e.g. {"class": "holder", "alpha": 0.5}."""
    if not isinstance(cfg, dict) or "class" not in cfg:
        raise UsageError("kernel config must be an object with a 'class' key")
    cfg = dict(cfg)
    kind = cfg.pop("class")
    dim = int(cfg.pop("dim", 1))
    try:
        if kind == "zero":
            k = zero_kernel(dim)
        elif kind == "sign":
            k = sign_kernel(dim)
        elif kind == "indicator":
            k = indicator_kernel(cfg.pop("radius"), dim)
        elif kind == "holder":
            k = holder_kernel(cfg.pop("alpha"), dim)
        elif kind == "smooth":
            k = smooth_kernel(cfg.pop("scale", 1.0), dim)
        elif kind == "power":
            k = power_kernel(cfg.pop("a"), cfg.pop("cutoff", 1.0), cfg.pop("p", 2.0),
                             cfg.pop("cap", 1e3), dim)
        elif kind == "mollified":
            base = dict(cfg.pop("base"))
            base.setdefault("dim", dim)
            k = mollify(from_config(base), cfg.pop("delta"))
        else:
            raise UsageError(f"unknown kernel class {kind!r}; expected one of {KERNEL_CLASSES}")
    except KeyError as exc:
        raise UsageError(f"kernel class {kind!r} requires parameter {exc.args[0]!r}") from None
    if cfg:
        raise UsageError(f"unknown parameters for kernel {kind!r}: {sorted(cfg)}")
    return k


# ---------------------------------------------------------------------------
# pointwise evaluation


def _profile(k: KernelSpec, r: np.ndarray) -> np.ndarray:
    if k.kind == "zero":
        return np.zeros_like(r)
    if k.kind == "sign":
        return np.ones_like(r)
    if k.kind == "indicator":
        return (r <= k.radius).astype(float)
    if k.kind == "holder":
        return np.minimum(1.0, r ** k.alpha)
    if k.kind == "smooth":
        return np.tanh(r / k.scale)
    if k.kind == "power":
        with np.errstate(divide="ignore"):
            g = np.minimum(np.where(r > 0, r, 1.0) ** (-k.a), k.cap)
        return np.where(r <= k.cutoff, g, 0.0)
    raise AssertionError(k.kind)


def _eval_1d(k: KernelSpec, x: np.ndarray) -> np.ndarray:
    """Scalar kernel on a 1-d array of arguments."""
    if k.kind == "mollified":
        return _mollified_1d(k, x)
    return -np.sign(x) * _profile(k, np.abs(x))


def _eval_nd(k: KernelSpec, x: np.ndarray) -> np.ndarray:
    """Vector kernel on points x of shape (..., 2)."""
    if k.kind == "mollified":
        return _mollified_2d(k, x)
    r = np.sqrt(np.sum(x * x, axis=-1))
    safe = np.where(r > 0, r, 1.0)
    coef = np.where(r > 0, _profile(k, r) / safe, 0.0)
    return -x * coef[..., None]


def evaluate(kernel: KernelSpec, x):
    """Evaluate b at points x.

    In 1-d, x may be a scalar (returns a float) or an array of shape (...,) or
    (..., 1). In 2-d x must have trailing axis of length 2.
    """
    arr = np.asarray(x, dtype=float)
    if kernel.dim == 1:
        if arr.ndim == 0:
            return float(_eval_1d(kernel, arr.reshape(1))[0])
        if arr.shape[-1] == 1 and arr.ndim >= 2:
            return _eval_1d(kernel, arr[..., 0].ravel()).reshape(arr.shape)
        if arr.ndim >= 2 and arr.shape[-1] != 1:
            raise UsageError(f"1-d kernel evaluated at points of dimension {arr.shape[-1]}")
        return _eval_1d(kernel, arr.ravel()).reshape(arr.shape)
    if arr.ndim == 0 or arr.shape[-1] != kernel.dim:
        raise UsageError(f"{kernel.dim}-d kernel evaluated at points of shape {arr.shape}")
    flat = arr.reshape(-1, kernel.dim)
    return _eval_nd(kernel, flat).reshape(arr.shape)


def evaluate_scalar(kernel: KernelSpec, x) -> np.ndarray:
    """Elementwise evaluation of a 1-d kernel on an array of any shape."""
    if kernel.dim != 1:
        raise UsageError("evaluate_scalar needs a 1-d kernel")
    arr = np.asarray(x, dtype=float)
    return _eval_1d(kernel, arr.ravel()).reshape(arr.shape)


def gradient(kernel: KernelSpec, x) -> np.ndarray:
    """Derivative of a 1-d kernel (a.e. for nonsmooth classes)."""
    if kernel.dim != 1:
        raise UsageError("gradient is implemented for 1-d kernels only")
    x = np.asarray(x, dtype=float)
    r = np.abs(x)
    k = kernel
    if k.kind in ("zero", "sign", "indicator"):
        return np.zeros_like(x)
    if k.kind == "holder":
        with np.errstate(divide="ignore"):
            return np.where(r < 1, -k.alpha * np.where(r > 0, r, np.inf) ** (k.alpha - 1), 0.0)
    if k.kind == "smooth":
        return -1.0 / (k.scale * np.cosh(x / k.scale) ** 2)
    if k.kind == "power":
        rc = k.cap ** (-1.0 / k.a)
        with np.errstate(divide="ignore"):
            g = k.a * np.where(r > 0, r, 1.0) ** (-k.a - 1)
        return np.where((r > rc) & (r <= k.cutoff), g, 0.0)
    return _mollified_1d(k, x.ravel(), derivative=True).reshape(x.shape)


def eval_on_grid(kernel: KernelSpec, grid: Grid) -> np.ndarray:
    """Kernel values at cell centres, shape grid.shape + (dim,)."""
    if grid.dim != kernel.dim:
        raise UsageError(f"grid dim {grid.dim} != kernel dim {kernel.dim}")
    return evaluate(kernel, grid.mesh())


def lattice_stencil(kernel: KernelSpec, cell_width: float, half_extent: int) -> np.ndarray:
    """b at lattice offsets k*w, |k| <= half_extent along each axis.

    Shape (2*half_extent+1,)*dim + (dim,); the centre entry is b(0).
    """
    offs = np.arange(-half_extent, half_extent + 1) * cell_width
    if kernel.dim == 1:
        pts = offs[:, None]
    else:
        xx, yy = np.meshgrid(offs, offs, indexing="ij")
        pts = np.stack([xx, yy], axis=-1)
    return evaluate(kernel, pts)


# ---------------------------------------------------------------------------
# mollifier


def _raw_bump(u):
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1
    out = np.zeros_like(u)
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def _raw_bump_derivative(u):
    """d/du of exp(-1/(1-u^2))."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1
    out = np.zeros_like(u)
    ui = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ui ** 2)) * (-2.0 * ui / (1.0 - ui ** 2) ** 2)
    return out


@lru_cache(maxsize=None)
def bump_normalisation(dim: int) -> float:
    """Constant c making c * exp(-1/(1-|u|^2)) a unit-mass density on the unit ball."""
    if dim == 1:
        mass = integrate.quad(lambda u: float(_raw_bump(u)), -1, 1, epsabs=1e-14, epsrel=1e-13)[0]
    else:
        mass = 2 * math.pi * integrate.quad(lambda r: r * float(_raw_bump(r)), 0, 1,
                                            epsabs=1e-14, epsrel=1e-13)[0]
    return 1.0 / mass


def bump(x, delta: float, dim: int = 1) -> np.ndarray:
    """The mollifier phi_delta(x) = c delta^-d exp(-1/(1-|x/delta|^2))."""
    x = np.asarray(x, dtype=float)
    r = np.abs(x) if dim == 1 else np.sqrt(np.sum(x * x, axis=-1))
    return bump_normalisation(dim) * delta ** (-dim) * _raw_bump(r / delta)


@lru_cache(maxsize=None)
def _gauss_legendre(n):
    return np.polynomial.legendre.leggauss(n)


def _breakpoints(base: KernelSpec, delta: float) -> np.ndarray:
    """Points (in the base kernel's argument) where b is not smooth."""
    pts = [0.0]
    if base.kind == "indicator":
        pts += [base.radius, -base.radius]
    elif base.kind == "holder":
        pts += [1.0, -1.0]
    elif base.kind == "power":
        rc = base.cap ** (-1.0 / base.a)
        pts += [base.cutoff, -base.cutoff, rc, -rc]
        # geometric grading towards the singularity
        g = delta * 2.0 ** -np.arange(1, _GRADING + 1)
        pts += list(g) + list(-g)
    elif base.kind in ("smooth", "zero"):
        pts = []
    return np.asarray(pts, dtype=float)


@lru_cache(maxsize=1)
def _bump_cdf():
    """Hermite interpolant of F(u) = int_{-1}^u bump, normalised so F(1) = 1."""
    u = np.linspace(-1.0, 1.0, _CDF_TABLE + 1)
    nodes, weights = _gauss_legendre(_NODES)
    half = 0.5 * (u[1] - u[0])
    mid = 0.5 * (u[1:] + u[:-1])
    cells = np.sum(_raw_bump(mid[:, None] + half * nodes) * (half * weights), axis=1)
    cdf = np.concatenate([[0.0], np.cumsum(cells)])
    mass = cdf[-1]
    return interpolate.CubicHermiteSpline(u, cdf / mass, _raw_bump(u) / mass), 1.0 / mass


def _mollified_sign_1d(delta: float, x: np.ndarray, derivative: bool) -> np.ndarray:
    """-(sign * phi_delta)(x) = 1 - 2 F(x / delta), exactly odd."""
    spline, c = _bump_cdf()
    u = np.clip(x / delta, -1.0, 1.0)
    if derivative:
        return -2.0 * c * _raw_bump(x / delta) / delta
    au = np.abs(u)
    return -np.sign(u) * (2.0 * spline(au) - 1.0)


def _mollified_1d(k: KernelSpec, x: np.ndarray, derivative: bool = False) -> np.ndarray:
    """(b * phi)(x) or its derivative (b * phi')(x) for 1-d points x."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        return x.copy()
    base, delta = k.base, k.delta
    if base.kind == "sign":
        return _mollified_sign_1d(delta, x, derivative)
    val = _mollified_1d_raw(base, delta, x, derivative)
    if k.odd:
        # antisymmetrise so oddness holds bit for bit
        other = _mollified_1d_raw(base, delta, -x, derivative)
        val = 0.5 * (val - other) if not derivative else 0.5 * (val + other)
    return val


def _mollified_1d_raw(base, delta, x, derivative):
    nodes, weights = _gauss_legendre(_NODES)
    uniform = x[:, None] - delta + (2 * delta / _PANELS) * np.arange(_PANELS + 1)[None, :]
    bp = _breakpoints(base, delta)
    if bp.size:
        lo = (x - delta)[:, None]
        hi = (x + delta)[:, None]
        clipped = np.clip(bp[None, :], lo, hi)
        edges = np.sort(np.concatenate([uniform, clipped], axis=1), axis=1)
    else:
        edges = uniform
    a = edges[:, :-1]
    b = edges[:, 1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    z = mid[..., None] + half[..., None] * nodes  # argument of b
    w = half[..., None] * weights
    bz = _eval_1d(base, z.ravel()).reshape(z.shape)
    y = x[:, None, None] - z  # argument of the mollifier
    mass = np.sum(_raw_bump(y / delta) * w, axis=(1, 2))
    if derivative:
        phi = _raw_bump_derivative(y / delta) / delta
    else:
        phi = _raw_bump(y / delta)
    # normalise by the quadrature's own bump mass so constants are reproduced exactly
    return np.sum(bz * phi * w, axis=(1, 2)) / mass


def _mollified_2d(k: KernelSpec, x: np.ndarray) -> np.ndarray:
    """Polar quadrature of int b(x - y) phi(y) dy over the disc |y| < delta."""
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    base, delta = k.base, k.delta
    nodes, weights = _gauss_legendre(_NODES)
    edges = np.linspace(0.0, delta, _RADIAL_PANELS + 1)
    extra = [np.linalg.norm(x, axis=1)]
    if base.kind in ("indicator", "power"):
        extra.append(np.abs(np.linalg.norm(x, axis=1) - (base.radius or base.cutoff)))
    e = np.concatenate([np.broadcast_to(edges, (x.shape[0], edges.size))]
                       + [np.clip(v, 0, delta)[:, None] for v in extra], axis=1)
    e = np.sort(e, axis=1)
    a, b = e[:, :-1], e[:, 1:]
    rho = 0.5 * (a + b)[..., None] + 0.5 * (b - a)[..., None] * nodes  # (n, P, q)
    wr = 0.5 * (b - a)[..., None] * weights
    theta = (np.arange(_ANGLES) + 0.5) * (2 * math.pi / _ANGLES)
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)  # (A, 2)
    y = rho[..., None, None] * dirs  # (n, P, q, A, 2)
    pts = x[:, None, None, None, :] - y
    bz = _eval_nd(base, pts.reshape(-1, 2)).reshape(pts.shape)
    wt = wr * rho * _raw_bump(rho / delta)  # (n, P, q)
    mass = np.sum(wt, axis=(1, 2)) * _ANGLES
    val = np.sum(bz * wt[..., None, None], axis=(1, 2, 3))
    return val / mass[:, None]


def holder_quotient(kernel: KernelSpec, points: np.ndarray, alpha: float,
                    max_sep: float = 1.0) -> float:
    """max |b(x)-b(y)| / |x-y|^alpha over sample pairs with 0 < |x-y| <= max_sep (1-d)."""
    pts = np.sort(np.asarray(points, dtype=float).ravel())
    vals = evaluate(kernel, pts)
    d = np.abs(pts[:, None] - pts[None, :])
    mask = (d > 0) & (d <= max_sep)
    num = np.abs(vals[:, None] - vals[None, :])
    return float(np.max(num[mask] / d[mask] ** alpha))


def with_dim(kernel: KernelSpec, dim: int) -> KernelSpec:
    if kernel.base is not None:
        return replace(kernel, dim=dim, base=with_dim(kernel.base, dim))
    return replace(kernel, dim=dim)
