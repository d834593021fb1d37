"""Named experiments: parameter schema + pipeline -> CSV tables, summary, check.

Each scenario is a :class:`Scenario` in :data:`REGISTRY`. ``run`` receives the
resolved parameters and a :class:`RunContext` and returns a
:class:`ScenarioResult`; ``passed`` is None for descriptive scenarios and a
bool for scenarios that carry a pass/fail contract.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import stats

from . import drifts as D
from . import kernels as K
from .density import half_sample_difference, histogram, kde, l1_distance, silverman
from .errors import ResourceLimitError, UsageError
from .grid import Grid
from .linearize import increment_scaling, pe_bound_check, run_linearization
from .malliavin import (euler_paths, inverse_moment_estimate, lower_bound_check,
                        malliavin_matrix, path_picard_budget, picard_series, streamed_gamma,
                        variational_derivative)
from .oracle import density_on_grid, kink_jump
from .regularity import kink_statistic, lp_decompose, regularity_index
from .rng import STREAM_SAMPLES, numpy_generator
from .simulate import SimConfig, cms_transform, simulate, simulate_plain


@dataclass
class Param:
    default: Any
    kind: str                    # int | float | str | bool | floats | strs
    help: str = ""
    positive: bool = False
    choices: tuple | None = None
    counts: bool = False         # subject to the max_n cap


@dataclass
class Table:
    name: str
    columns: list
    rows: list = field(default_factory=list)


@dataclass
class ScenarioResult:
    tables: list
    summary: dict
    passed: bool | None = None
    checks: dict = field(default_factory=dict)


@dataclass
class RunContext:
    seed: int = 0
    workers: int = 1
    max_runtime: float | None = None
    log: Callable[[str], None] = lambda msg: None
    started: float = field(default_factory=time.monotonic)

    def checkpoint(self, stage: str):
        self.log(stage)
        if self.max_runtime is not None and time.monotonic() - self.started > self.max_runtime:
            raise ResourceLimitError(
                f"max_runtime of {self.max_runtime:g} s exceeded before stage {stage!r}")


@dataclass
class Scenario:
    name: str
    description: str
    params: dict
    tables: dict                 # table name -> column list
    run: Callable


REGISTRY: dict = {}


def register(name, description, params, tables):
    def wrap(fn):
        REGISTRY[name] = Scenario(name, description, params, tables, fn)
        return fn
    return wrap


def get(name: str) -> Scenario:
    if name not in REGISTRY:
        raise UsageError(f"unknown scenario {name!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[name]


def resolve_params(scenario: Scenario, given: dict | None) -> dict:
    """Defaults overlaid with ``given``; unknown keys and bad values raise UsageError."""
    given = dict(given or {})
    unknown = sorted(set(given) - set(scenario.params))
    if unknown:
        raise UsageError(f"unknown parameter(s) for scenario {scenario.name!r}: {unknown}")
    out = {}
    for key, spec in scenario.params.items():
        out[key] = coerce(key, given.get(key, spec.default), spec)
    return out


def coerce(key: str, value, spec: Param):
    def num(v, kind):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise UsageError(f"{key} must be a number")
        if kind == "int":
            if float(v) != int(v):
                raise UsageError(f"{key} must be an integer")
            v = int(v)
        else:
            v = float(v)
        if spec.positive and not v > 0:
            raise UsageError(f"{key} must be > 0")
        return v

    if spec.kind in ("int", "float"):
        value = num(value, spec.kind)
    elif spec.kind == "bool":
        if not isinstance(value, bool):
            raise UsageError(f"{key} must be true or false")
    elif spec.kind == "str":
        if not isinstance(value, str):
            raise UsageError(f"{key} must be a string")
    elif spec.kind == "floats":
        if not isinstance(value, (list, tuple)) or not value:
            raise UsageError(f"{key} must be a non-empty list of numbers")
        value = [num(v, "float") for v in value]
    elif spec.kind == "strs":
        if not isinstance(value, (list, tuple)) or not value:
            raise UsageError(f"{key} must be a non-empty list of strings")
        value = [str(v) for v in value]
    if spec.choices is not None:
        items = value if isinstance(value, list) else [value]
        bad = [v for v in items if v not in spec.choices]
        if bad:
            raise UsageError(f"{key} must be one of {list(spec.choices)}, got {bad}")
    return value


# ---------------------------------------------------------------- shared pieces

MULTS = Param([0.5, 1.0, 2.0], "floats", "Silverman bandwidth multipliers", positive=True)


def _sim_params(n=100_000, dt=1e-3, t=1.0):
    return {
        "n": Param(n, "int", "number of particles", positive=True, counts=True),
        "dt": Param(dt, "float", "Euler time step", positive=True),
        "t": Param(t, "float", "final time", positive=True),
    }


def _config(p, ctx, drift, **kw):
    return SimConfig(p["n"], p["dt"], p["t"], drift, seed=ctx.seed, workers=ctx.workers, **kw)


def _index_row(density_x, h, grid, noise_factor):
    f = kde(density_x, h, grid)
    dec = lp_decompose(f)
    noise = lp_decompose(half_sample_difference(density_x, h, grid), dec.levels,
                         edge_check=False).norms(1)
    norms = dec.norms(1)
    return regularity_index(norms, 1, noise=noise, noise_factor=noise_factor), norms, noise


# ---------------------------------------------------------------- oracle

@register(
    "oracle", "plain sign-drift SDE against its closed-form density",
    {**_sim_params(), "x0": Param(0.0, "float", "start point"),
     "half_width": Param(8.0, "float", "density box half-width", positive=True),
     "cells": Param(1024, "int", "density cells", positive=True),
     "bandwidth_mults": MULTS,
     "threshold": Param(0.02, "float", "L1 acceptance threshold", positive=True)},
    {"l1": ["estimator", "bandwidth_mult", "bandwidth", "l1_distance", "mass"],
     "density": ["y", "simulated", "oracle"]},
)
def run_oracle(p, ctx):
    init = {"type": "dirac", "x0": p["x0"]}
    ctx.checkpoint("simulate plain sign SDE")
    x = simulate_plain(D.sign(), _config(p, ctx, D.sign()), init).final
    grid = Grid(p["half_width"], p["cells"])
    ctx.checkpoint("closed-form density")
    if p["x0"] == 0:
        ref = density_on_grid(grid, "sign0", t=p["t"])
    else:
        ref = density_on_grid(grid, "signx", t=p["t"], x0=p["x0"])
    h0 = silverman(x)
    l1 = Table("l1", ["estimator", "bandwidth_mult", "bandwidth", "l1_distance", "mass"])
    hist = histogram(x, grid)
    l1.rows.append(["histogram", 0.0, 0.0, l1_distance(hist, ref), hist.mass])
    base = None
    for m in p["bandwidth_mults"]:
        f = kde(x, h0 * m, grid)
        l1.rows.append(["kde", m, h0 * m, l1_distance(f, ref), f.mass])
        if m == 1.0:
            base = f
    base = base if base is not None else kde(x, h0, grid)
    dens = Table("density", ["y", "simulated", "oracle"],
                 [[y, a, b] for y, a, b in zip(grid.centers(), base.values, ref.values)])
    d_silverman = l1_distance(base, ref)
    passed = d_silverman <= p["threshold"]
    return ScenarioResult([l1, dens],
                          {"l1_silverman": d_silverman, "bandwidth": h0,
                           "oracle_mass": ref.mass, "threshold": p["threshold"]},
                          passed, {"oracle_match": passed})


# ---------------------------------------------------------------- kink

@register(
    "kink", "derivative jump at 0: mean-field sign kernel against plain sign drift",
    {**_sim_params(),
     "half_width": Param(8.0, "float", "density box half-width", positive=True),
     "cells": Param(4096, "int", "density cells", positive=True),
     "bandwidth_mults": MULTS,
     "scales": Param([0.15, 0.3], "floats", "two kink scales (fine, coarse)", positive=True),
     "backend": Param("direct", "str", "mean-field drift backend", choices=("direct", "fft")),
     "ratio_max": Param(0.25, "float", "largest accepted MV/plain ratio", positive=True),
     "jstar_tol": Param(0.2, "float", "relative tolerance of the plain statistic to J*",
                        positive=True)},
    {"kink": ["bandwidth_mult", "bandwidth", "kink_plain", "kink_mv", "ratio",
              "plain_over_jstar"]},
)
def run_kink(p, ctx):
    if len(p["scales"]) != 2:
        raise UsageError("scales must hold exactly two values")
    grid = Grid(p["half_width"], p["cells"])
    ctx.checkpoint("simulate plain sign SDE")
    xp = simulate_plain(D.sign(), _config(p, ctx, D.sign())).final
    ctx.checkpoint("simulate mean-field sign kernel")
    kw = {"backend": p["backend"], "grid": grid if p["backend"] == "fft" else None}
    xm = simulate(_config(p, ctx, K.sign_kernel(), **kw)).final
    jstar = abs(kink_jump(p["t"]))
    h0 = silverman(xp)
    tab = Table("kink", REGISTRY["kink"].tables["kink"])
    ok = True
    for m in p["bandwidth_mults"]:
        h = h0 * m
        kp = kink_statistic(kde(xp, h, grid), 0.0, p["scales"], smoothing=h)
        km = kink_statistic(kde(xm, h, grid), 0.0, p["scales"], smoothing=h)
        ratio = km / kp
        tab.rows.append([m, h, kp, km, ratio, kp / jstar])
        ok &= ratio <= p["ratio_max"] and abs(kp / jstar - 1.0) <= p["jstar_tol"]
    return ScenarioResult([tab], {"jstar": jstar, "bandwidth": h0,
                                  "max_ratio": max(r[4] for r in tab.rows)},
                          bool(ok), {"kink_contrast": bool(ok)})


# ---------------------------------------------------------------- slopes

@register(
    "slopes", "approximation-error ladder, increment scaling and Gaussian PE ratios",
    {"t": Param(1.0, "float", "reference time", positive=True),
     "eps_exponents": Param([4, 5, 6, 7, 8, 9, 10], "floats", "epsilon = 2^-k"),
     "samples": Param(2000, "int", "coupled samples per order", positive=True, counts=True),
     "drift_order0": Param("sign", "str", "bounded drift for order 0"),
     "drift_order1": Param("tanh", "str", "Lipschitz drift for order 1"),
     "drift_order2": Param("tanh", "str", "C^{1,1} drift for order 2"),
     "lags": Param([1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1], "floats",
                   "increment lags", positive=True),
     "increment_samples": Param(10_000, "int", "samples for increment scaling",
                                positive=True, counts=True),
     "increment_drift": Param("sign", "str", "drift for increment scaling"),
     "pe_epsilon": Param(0.04, "float", "PE variance epsilon", positive=True),
     "pe_fractions": Param([0.125, 0.25, 0.5, 1.0], "floats", "h / sqrt(eps)", positive=True)},
    {"ae": ["order", "epsilon", "ae_mean", "ae_stderr"],
     "slopes": ["order", "fitted_slope", "slope_stderr", "target", "tolerance", "pass"],
     "increments": ["moment", "lag", "value", "stderr"],
     "pe": ["m", "h", "epsilon", "delta_l1", "ratio", "ratio_rescaled", "collapse_diff"]},
)
def run_slopes(p, ctx):
    eps = [2.0 ** -k for k in p["eps_exponents"]]
    targets = {0: (1.0, 0.1), 1: (1.5, 0.15), 2: (2.0, 0.2)}
    ae = Table("ae", REGISTRY["slopes"].tables["ae"])
    sl = Table("slopes", REGISTRY["slopes"].tables["slopes"])
    fitted = {}
    ok = True
    for order in (0, 1, 2):
        ctx.checkpoint(f"linearization order {order}")
        drift = D.by_name(p[f"drift_order{order}"])
        res = run_linearization(order, drift, p["t"], eps, p["samples"], ctx.seed,
                                workers=ctx.workers)
        for e, m, s in zip(res.epsilons, res.ae_values, res.ae_stderr):
            ae.rows.append([order, e, m, s])
        target, tol = targets[order]
        good = abs(res.fitted_slope - target) <= tol
        ok &= good
        fitted[order] = res.fitted_slope
        sl.rows.append([order, res.fitted_slope, res.slope_stderr, target, tol, good])
    ladder = fitted[0] < fitted[1] < fitted[2]

    inc = Table("increments", REGISTRY["slopes"].tables["increments"])
    exps = {}
    for moment in (1, 2):
        ctx.checkpoint(f"increment scaling, moment {moment}")
        r = increment_scaling(D.by_name(p["increment_drift"]), p["t"], p["lags"],
                              p["increment_samples"], ctx.seed, moment=moment,
                              workers=ctx.workers)
        exps[moment] = r.exponent
        for lag, v, s in zip(r.lags, r.values, r.stderr):
            inc.rows.append([moment, lag, v, s])
    inc_ok = abs(exps[1] - 0.5) <= 0.05

    ctx.checkpoint("Gaussian PE ratios")
    pe = Table("pe", REGISTRY["slopes"].tables["pe"])
    e = p["pe_epsilon"]
    hs = [f * math.sqrt(e) for f in p["pe_fractions"]]
    worst_collapse, worst_ratio = 0.0, 0.0
    for m in (1, 2, 3):
        rows = pe_bound_check(m, hs, e)
        big = pe_bound_check(m, [2 * h for h in hs], 4 * e)
        for a, b in zip(rows, big):
            diff = abs(a.ratio - b.ratio)
            worst_collapse = max(worst_collapse, diff)
            worst_ratio = max(worst_ratio, a.ratio)
            pe.rows.append([m, a.h, a.epsilon, a.delta_l1, a.ratio, b.ratio, diff])
    pe_ok = worst_collapse <= 1e-10 and np.isfinite(worst_ratio)

    checks = {"ae_slopes": bool(ok), "slope_ladder": bool(ladder),
              "increment_exponent": bool(inc_ok), "pe_bound": bool(pe_ok)}
    summary = {"slopes": {str(k): v for k, v in fitted.items()},
               "increment_exponent": exps[1], "increment_exponent_m2": exps[2],
               "pe_max_ratio": worst_ratio, "pe_max_collapse_diff": worst_collapse}
    return ScenarioResult([ae, sl, inc, pe], summary, all(checks.values()), checks)


# ---------------------------------------------------------------- singular

@register(
    "singular", "mean-field density under an L^p-singular power kernel",
    {**_sim_params(),
     "a": Param(0.3, "float", "singularity exponent |x|^-a", positive=True),
     "p": Param(2.0, "float", "integrability index", positive=True),
     "cutoff": Param(1.0, "float", "kernel support radius", positive=True),
     "cap": Param(1e3, "float", "pointwise cap", positive=True),
     "half_width": Param(8.0, "float", "box half-width", positive=True),
     "cells": Param(4096, "int", "grid cells", positive=True),
     "bandwidth_mults": MULTS,
     "noise_factor": Param(2.0, "float", "block resolution factor over noise", positive=True)},
    {"integrability": ["a", "p", "d", "a_times_p", "d_over_p", "condition_met"],
     "index": ["bandwidth_mult", "bandwidth", "index", "capped", "resolved_blocks",
               "lower_slope", "kink"]},
)
def run_singular(p, ctx):
    kernel = K.power_kernel(p["a"], p["cutoff"], p["p"], p["cap"])
    grid = Grid(p["half_width"], p["cells"])
    d = 1
    integ = Table("integrability", REGISTRY["singular"].tables["integrability"],
                  [[p["a"], p["p"], d, p["a"] * p["p"], d / p["p"],
                    p["a"] * p["p"] < d and d / p["p"] < 1]])
    ctx.checkpoint("simulate mean-field power kernel")
    x = simulate(_config(p, ctx, kernel, backend="fft", grid=grid)).final
    h0 = silverman(x)
    tab = Table("index", REGISTRY["singular"].tables["index"])
    for m in p["bandwidth_mults"]:
        h = h0 * m
        fit, _, _ = _index_row(x, h, grid, p["noise_factor"])
        kink = kink_statistic(kde(x, h, grid), 0.0, (0.15, 0.3), smoothing=h)
        tab.rows.append([m, h, fit.value, fit.capped, fit.resolved, fit.lower_slope, kink])
    return ScenarioResult([integ, tab], {"kernel": kernel.label, "bandwidth": h0,
                                         "std": float(x.std())})


# ---------------------------------------------------------------- stable

@register(
    "stable", "symmetric alpha-stable driver: sampler checks and kink contrast",
    {**_sim_params(),
     "alpha": Param(1.5, "float", "stability index in (1, 2)", positive=True),
     "draws": Param(1_000_000, "int", "sampler draws", positive=True, counts=True),
     "tail_range": Param([5.0, 50.0], "floats", "tail fit range", positive=True),
     "half_width": Param(128.0, "float", "density box half-width", positive=True),
     "cells": Param(32768, "int", "density cells", positive=True),
     "bandwidth_mults": MULTS},
    {"tail": ["x", "tail_probability"],
     "scaling": ["draws", "ks_statistic"],
     "kink": ["bandwidth_mult", "bandwidth", "kink_plain", "kink_mv", "ratio"]},
)
def run_stable(p, ctx):
    alpha = p["alpha"]
    if not 1 < alpha < 2:
        raise UsageError("alpha must lie in (1, 2)")
    ctx.checkpoint("stable sampler")
    rng = numpy_generator(ctx.seed, STREAM_SAMPLES)
    s = cms_transform(alpha, rng.random(p["draws"]), 1.0 - rng.random(p["draws"]))
    lo, hi = p["tail_range"]
    xs = np.exp(np.linspace(math.log(lo), math.log(hi), 12))
    a = np.sort(np.abs(s))
    tail = 1.0 - np.searchsorted(a, xs, side="right") / a.size
    slope = float(np.polyfit(np.log(xs), np.log(tail), 1)[0])
    ttab = Table("tail", ["x", "tail_probability"], [[u, v] for u, v in zip(xs, tail)])
    # increments over dt and 2 dt agree in law after rescaling by 2^(1/alpha)
    m = min(p["draws"] // 2, 100_000)
    dt = p["dt"]
    one = dt ** (1 / alpha) * s[:m]
    two = (2 * dt) ** (1 / alpha) * s[m:2 * m] / 2 ** (1 / alpha)
    ks = float(stats.ks_2samp(one, two).statistic)
    stab = Table("scaling", ["draws", "ks_statistic"], [[m, ks]])

    grid = Grid(p["half_width"], p["cells"])
    ctx.checkpoint("simulate plain sign SDE, stable driver")
    xp = simulate_plain(D.sign(), _config(p, ctx, D.sign(), driver="stable", alpha=alpha)).final
    ctx.checkpoint("simulate mean-field sign kernel, stable driver")
    xm = simulate(_config(p, ctx, K.sign_kernel(), driver="stable", alpha=alpha)).final
    h0 = silverman(xp, robust=True)
    ktab = Table("kink", REGISTRY["stable"].tables["kink"])
    for mult in p["bandwidth_mults"]:
        h = h0 * mult
        kp = kink_statistic(kde(xp, h, grid), 0.0, (0.15, 0.3), smoothing=h)
        km = kink_statistic(kde(xm, h, grid), 0.0, (0.15, 0.3), smoothing=h)
        ktab.rows.append([mult, h, kp, km, km / kp])
    checks = {"tail_slope": abs(slope + alpha) <= 0.1, "self_similarity": ks < 0.01}
    return ScenarioResult([ttab, stab, ktab],
                          {"tail_slope": slope, "ks_statistic": ks, "bandwidth": h0,
                           "median_abs_plain": float(np.median(np.abs(xp))),
                           "median_abs_mv": float(np.median(np.abs(xm)))},
                          all(checks.values()), checks)


# ---------------------------------------------------------------- malliavin

@register(
    "malliavin", "Malliavin matrix checks, inverse moments and small-norm probabilities",
    {"t": Param(1.0, "float", "final time", positive=True),
     "dt": Param(1e-3, "float", "path step", positive=True),
     "p": Param(2.0, "float", "inverse moment order", positive=True),
     "samples": Param(10_000, "int", "Monte-Carlo samples", positive=True, counts=True),
     "deltas": Param([0.4, 0.2, 0.1, 0.05], "floats", "mollification widths", positive=True),
     "reference_delta": Param(0.2, "float", "width whose determinants are written out",
                              positive=True),
     "bound_deltas": Param([0.05, 0.025, 0.0125], "floats", "lower-bound deltas",
                           positive=True),
     "bound_fractions": Param([0.25, 0.5, 0.9], "floats", "eps / (delta / 2)", positive=True),
     "check_samples": Param(64, "int", "paths for the deterministic checks", positive=True,
                            counts=True)},
    {"checks": ["check", "value", "reference", "error", "tolerance", "pass"],
     "moments": ["delta", "p", "estimate", "half_a", "half_b", "relative_gap", "stable",
                 "flagged", "min_det"],
     "lower_bound": ["delta", "epsilon", "probability", "bound_shape"],
     "norm_quantiles": ["quantile", "norm2"],
     "dets": ["sample_id", "det_gamma"]},
)
def run_malliavin(p, ctx):
    t, dt = p["t"], p["dt"]
    chk = Table("checks", REGISTRY["malliavin"].tables["checks"])

    def add(name, value, ref, tol):
        err = abs(value - ref)
        chk.rows.append([name, value, ref, err, tol, err <= tol])

    ctx.checkpoint("closed-form checks")
    m = p["check_samples"]
    g = malliavin_matrix(euler_paths(D.zero(), t, dt, m, ctx.seed), D.zero().grad, t,
                         dt).gamma[:, 0, 0]
    add("zero_drift_gamma", float(g[np.argmax(np.abs(g - t))]), t, 0.0)
    lin = D.linear(-1.0)
    g = malliavin_matrix(euler_paths(lin, t, dt, m, ctx.seed), lin.grad, t, dt).gamma[:, 0, 0]
    ref = -math.expm1(-2 * t) / 2
    add("linear_drift_gamma", float(g[np.argmax(np.abs(g - ref))]), ref, 1e-5)
    # Picard partial sums against the variational ODE along mollified-sign paths
    ms = D.mollified_sign(p["reference_delta"])
    paths = euler_paths(ms, t, dt, m, ctx.seed)
    ode = variational_derivative(paths, ms.grad, 0.0, t, dt)[:, 0, 0]
    pic = picard_series(paths, ms.grad, 0.0, t, dt, 8)[-1][:, 0, 0]
    budget = path_picard_budget(paths, ms.grad, 0.0, t, dt, 8)
    # gap beyond the truncation budget, relative to the size of the series
    excess = float(np.max((np.abs(pic - ode) - budget) / (1.0 + np.abs(pic))))
    chk.rows.append(["picard_vs_ode_excess", excess, 0.0, max(excess, 0.0), 1e-5,
                     excess <= 1e-5])

    mom = Table("moments", REGISTRY["malliavin"].tables["moments"])
    dets = Table("dets", ["sample_id", "det_gamma"])
    ref_stable = None
    for delta in p["deltas"]:
        ctx.checkpoint(f"inverse moment, delta={delta:g}")
        r = inverse_moment_estimate(D.mollified_sign(delta), t, p["p"], p["samples"], ctx.seed,
                                    dt, workers=ctx.workers)
        mom.rows.append([delta, r.p, r.estimate, r.halves[0], r.halves[1], r.relative_gap,
                         r.stable, r.flagged, r.min_det])
        if delta == p["reference_delta"]:
            ref_stable = r.stable and math.isfinite(r.estimate)
            dets.rows = [[i, v] for i, v in enumerate(r.dets)]
    if ref_stable is None:
        raise UsageError("reference_delta must be one of deltas")

    ctx.checkpoint("small-norm probabilities")
    lb = Table("lower_bound", REGISTRY["malliavin"].tables["lower_bound"])
    for row in lower_bound_check(ms, t, p["bound_deltas"], p["bound_fractions"],
                                 p["samples"], ctx.seed, dt, p["p"]):
        lb.rows.append([row.delta, row.epsilon, row.probability, row.bound_shape])
    norm2 = streamed_gamma(ms, t, dt, p["samples"], ctx.seed)[:, 0, 0]
    qs = [0.0, 1e-3, 1e-2, 0.1, 0.5]
    qt = Table("norm_quantiles", ["quantile", "norm2"],
               [[q, v] for q, v in zip(qs, np.quantile(norm2, qs))])

    checks = {r[0]: bool(r[5]) for r in chk.rows}
    checks["inverse_moment_stable"] = bool(ref_stable)
    return ScenarioResult([chk, mom, lb, qt, dets],
                          {"reference_delta": p["reference_delta"],
                           "grad_bound": ms.grad_bound},
                          all(checks.values()), checks)


# ---------------------------------------------------------------- table

# kernel classes ordered by the regularity ladder; equal rank = same row
TABLE_CLASSES = {
    "moll_dist": (0, lambda: K.mollify(K.power_kernel(0.75, 1.0, 1.2, 1e6), 0.05)),
    "Lp": (1, lambda: K.power_kernel(0.3, 1.0, 2.0, 1e3)),
    "Linf": (1, lambda: K.sign_kernel()),
    "Holder": (2, lambda: K.holder_kernel(0.5)),
    "C1b": (3, lambda: K.smooth_kernel(0.5)),
}


def table_order_check(rows, tol: float) -> dict:
    """Ordering checks on (class, rank, mult, index) rows.

    ``monotone``: at every bandwidth, each class scores at least the best
    index of every lower-ranked class minus ``tol``. ``stable``: the
    tolerance-aware pairwise comparisons are the same at every bandwidth.
    """
    by_mult = {}
    for name, rank, mult, idx in rows:
        by_mult.setdefault(mult, []).append((name, rank, idx))
    monotone, patterns = True, []
    for mult, items in sorted(by_mult.items()):
        for n1, r1, i1 in items:
            for n2, r2, i2 in items:
                if r2 > r1 and i2 < i1 - tol:
                    monotone = False
        pat = {}
        for n1, _, i1 in items:
            for n2, _, i2 in items:
                pat[(n1, n2)] = 0 if abs(i1 - i2) <= tol else (1 if i1 > i2 else -1)
        patterns.append(pat)
    stable = all(pt == patterns[0] for pt in patterns[1:])
    return {"monotone": monotone, "bandwidth_stable": stable}


@register(
    "table", "regularity index of mean-field densities across kernel classes",
    {**_sim_params(),
     "kernel": Param("all", "str", "one class (compared with Linf) or all",
                     choices=("all",) + tuple(TABLE_CLASSES)),
     "classes": Param(list(TABLE_CLASSES), "strs", "classes to run when kernel=all",
                      choices=tuple(TABLE_CLASSES)),
     "half_width": Param(8.0, "float", "box half-width", positive=True),
     "cells": Param(4096, "int", "grid cells", positive=True),
     "bandwidth_mults": MULTS,
     "tolerance": Param(0.2, "float", "index tolerance", positive=True),
     "noise_factor": Param(2.0, "float", "block resolution factor over noise", positive=True)},
    {"index": ["class", "rank", "bandwidth_mult", "bandwidth", "index", "capped",
               "resolved_blocks", "lower_slope", "fit_lo", "fit_hi"],
     "blocks": ["class", "bandwidth_mult", "n", "lp_norm", "noise_norm", "level_value"]},
)
def run_table(p, ctx):
    if p["kernel"] == "all":
        names = p["classes"]
    else:
        names = [p["kernel"]] + ([] if p["kernel"] == "Linf" else ["Linf"])
    grid = Grid(p["half_width"], p["cells"])
    idx = Table("index", REGISTRY["table"].tables["index"])
    blk = Table("blocks", REGISTRY["table"].tables["blocks"])
    order_rows = []
    for name in names:
        rank, make = TABLE_CLASSES[name]
        ctx.checkpoint(f"simulate class {name}")
        x = simulate(_config(p, ctx, make(), backend="fft", grid=grid)).final
        h0 = silverman(x)
        for m in p["bandwidth_mults"]:
            fit, norms, noise = _index_row(x, h0 * m, grid, p["noise_factor"])
            idx.rows.append([name, rank, m, h0 * m, fit.value, fit.capped, fit.resolved,
                             fit.lower_slope, fit.window[0], fit.window[1]])
            for n, (v, e) in enumerate(zip(norms, noise)):
                blk.rows.append([name, m, n, v, e, -math.log2(v) if v > 0 else math.inf])
            order_rows.append((name, rank, m, fit.value))
    checks = table_order_check(order_rows, p["tolerance"])
    capped = all(r[5] for r in idx.rows)
    return ScenarioResult([idx, blk], {"all_capped": capped, "classes": names},
                          all(checks.values()), checks)


# CSV layouts written by the plain CLI commands
COMMAND_TABLES = {
    "regularity": {"blocks": ["n", "lp_norm", "level_value"]},
    "oracle": {"values": ["y", "density"]},
    "linearize": {"ae": ["epsilon", "ae_mean", "ae_stderr"]},
    "malliavin": {"dets": ["sample_id", "det_gamma"]},
}


def describe() -> dict:
    """Parameter and CSV schemas of every scenario and command (schemas.json)."""
    out = {"scenarios": {}, "commands": COMMAND_TABLES}
    for name, sc in sorted(REGISTRY.items()):
        out["scenarios"][name] = {
            "description": sc.description,
            "parameters": {k: {"kind": p.kind, "default": p.default, "help": p.help}
                           for k, p in sc.params.items()},
            "tables": sc.tables,
        }
    return out
