"""Configuration files: JSON parsing with line numbers, schema checks, builders.

Two file kinds are recognised. An experiment file has a ``scenario`` key:

    {"scenario": "kink", "parameters": {"n": 20000}, "seed": 3,
     "output": "runs", "caps": {"max_n": 200000, "max_runtime": 600}}

anything else is a simulation file, the JSON form of SimConfig.to_dict()
plus an optional ``initial`` law.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import drifts as D
from . import kernels as K
from .errors import ConfigError, UsageError
from .grid import Grid
from .simulate import SimConfig

SIM_KEYS = {"n_particles", "dim", "dt", "t_end", "seed", "driver", "drift", "backend",
            "snapshot_times", "initial", "workers"}
EXPERIMENT_KEYS = {"scenario", "parameters", "seed", "output", "caps", "workers"}
CAP_KEYS = {"max_n", "max_runtime"}


def key_lines(text: str) -> dict:
    """Map each key path (tuple of keys / indices) to the line where it appears.

    Expects valid JSON. Object members map to the line of their key, array
    elements to the line where the element starts; the root is ``()``.
    """
    lines = {(): 1}
    stack = []          # frames: [is_object, key_or_index]
    line = 1
    want_key = False
    want_elem = False
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            i += 1
            continue
        if c in " \t\r":
            i += 1
            continue
        if want_elem and c != "]":
            lines[tuple(f[1] for f in stack)] = line
        want_elem = False
        if c == '"':
            j = i + 1
            while text[j] != '"':
                j += 2 if text[j] == "\\" else 1
            if want_key:
                stack[-1][1] = json.loads(text[i:j + 1])
                lines[tuple(f[1] for f in stack)] = line
                want_key = False
            i = j + 1
            continue
        if c == "{":
            stack.append([True, None])
            want_key = True
        elif c == "[":
            stack.append([False, 0])
            want_elem = True
        elif c in "}]":
            stack.pop()
        elif c == ",":
            if stack[-1][0]:
                want_key = True
            else:
                stack[-1][1] += 1
                want_elem = True
        i += 1
    return lines


@dataclass
class Diagnostics:
    lines: dict
    errors: list = field(default_factory=list)

    def line_of(self, path) -> int:
        path = tuple(path)
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path, 1)

    def add(self, path, message):
        self.errors.append(ConfigError(message, self.line_of(path)))

    def unknown(self, obj, allowed, path=()):
        for k in sorted(set(obj) - set(allowed)):
            where = ".".join(str(p) for p in (*path, k))
            self.add((*path, k), f"unknown key {where!r}")

    def raise_first(self):
        if self.errors:
            raise self.errors[0]


def parse(text: str) -> tuple:
    """json.loads with the decoder's line number turned into a ConfigError."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg} (column {exc.colno})", exc.lineno) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object", 1)
    return data, key_lines(text)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def check_simulation(data: dict, diag: Diagnostics):
    diag.unknown(data, SIM_KEYS)
    for key in ("n_particles", "dt", "t_end"):
        if key not in data:
            diag.add((), f"missing required key {key!r}")
    n = data.get("n_particles", 1)
    if not _is_int(n) or n < 1:
        diag.add(("n_particles",), "n_particles must be an integer >= 1")
    dim = data.get("dim", 1)
    if dim not in (1, 2) or isinstance(dim, bool):
        diag.add(("dim",), "dim must be 1 or 2")
    dt = data.get("dt", 1.0)
    if not _is_num(dt) or not dt > 0:
        diag.add(("dt",), "dt must be > 0")
    t_end = data.get("t_end", 1.0)
    if not _is_num(t_end) or not t_end > 0:
        diag.add(("t_end",), "t_end must be > 0")
    elif _is_num(dt) and dt > 0 and t_end < dt * (1 - 1e-12):
        diag.add(("t_end",), "t_end must be >= dt")
    seed = data.get("seed", 0)
    if not _is_int(seed) or not 0 <= seed < 2 ** 64:
        diag.add(("seed",), "seed must be an integer in [0, 2^64)")
    workers = data.get("workers", 1)
    if not _is_int(workers) or workers < 1:
        diag.add(("workers",), "workers must be an integer >= 1")

    drv = data.get("driver", {"type": "brownian"})
    if isinstance(drv, str):
        drv = {"type": drv}
    if not isinstance(drv, dict):
        diag.add(("driver",), "driver must be a string or an object")
    else:
        diag.unknown(drv, {"type", "alpha"}, ("driver",))
        kind = drv.get("type", "brownian")
        if kind not in ("brownian", "stable"):
            diag.add(("driver", "type"), f"unknown driver {kind!r}")
        if kind == "stable":
            a = drv.get("alpha")
            if not _is_num(a) or not 1 < a < 2:
                diag.add(("driver", "alpha") if "alpha" in drv else ("driver",),
                         "stable driver needs alpha in (1, 2)")
            if dim != 1:
                diag.add(("driver",), "the stable driver is only available in dim = 1")

    back = data.get("backend", {"type": "direct"})
    if isinstance(back, str):
        back = {"type": back}
    if not isinstance(back, dict):
        diag.add(("backend",), "backend must be a string or an object")
    else:
        diag.unknown(back, {"type", "half_width", "cells"}, ("backend",))
        kind = back.get("type", "direct")
        if kind not in ("direct", "fft"):
            diag.add(("backend", "type"), f"unknown backend {kind!r}")
        if kind == "fft":
            hw, cells = back.get("half_width"), back.get("cells")
            if not _is_num(hw) or not hw > 0:
                diag.add(("backend", "half_width") if "half_width" in back else ("backend",),
                         "fft backend needs half_width > 0")
            if not _is_int(cells) or cells < 2 or cells & (cells - 1):
                diag.add(("backend", "cells") if "cells" in back else ("backend",),
                         "fft backend needs cells = a power of two >= 2")

    if "drift" not in data:
        diag.add((), "missing required key 'drift'")
    else:
        drift = data["drift"]
        if not isinstance(drift, dict):
            diag.add(("drift",), "drift must be an object")
        elif drift.get("type") == "meanfield":
            diag.unknown(drift, {"type", "kernel"}, ("drift",))
            try:
                k = K.from_config(drift.get("kernel"))
                if _is_int(dim) and k.dim != dim:
                    diag.add(("drift", "kernel"), "kernel dim does not match dim")
            except UsageError as exc:
                diag.add(("drift", "kernel"), str(exc))
        elif drift.get("type") == "external":
            try:
                D.from_config({k: v for k, v in drift.items() if k != "type"})
            except (UsageError, KeyError) as exc:
                diag.add(("drift",), f"bad external drift: {exc}")
        else:
            diag.add(("drift",), "drift type must be 'meanfield' or 'external'")

    times = data.get("snapshot_times", [])
    if not isinstance(times, list) or not all(_is_num(v) for v in times):
        diag.add(("snapshot_times",), "snapshot_times must be a list of numbers")
    else:
        for i, v in enumerate(times):
            if _is_num(t_end) and not 0 <= v <= t_end * (1 + 1e-12):
                diag.add(("snapshot_times", i), f"snapshot time {v} outside [0, t_end]")
            if i and v <= times[i - 1]:
                diag.add(("snapshot_times", i), "snapshot_times must be strictly increasing")

    init = data.get("initial", {"type": "dirac"})
    if not isinstance(init, dict):
        diag.add(("initial",), "initial must be an object")
    else:
        allowed = {"dirac": {"x0"}, "normal": {"mean", "std"}, "uniform": {"low", "high"}}
        kind = init.get("type", "dirac")
        if kind not in allowed:
            diag.add(("initial", "type"), f"unknown initial law {kind!r}")
        else:
            diag.unknown(init, allowed[kind] | {"type"}, ("initial",))


def check_experiment(data: dict, diag: Diagnostics):
    from . import scenarios

    diag.unknown(data, EXPERIMENT_KEYS)
    name = data.get("scenario")
    if name not in scenarios.REGISTRY:
        diag.add(("scenario",), f"unknown scenario {name!r}; known: {sorted(scenarios.REGISTRY)}")
        return
    sc = scenarios.REGISTRY[name]
    params = data.get("parameters", {})
    if not isinstance(params, dict):
        diag.add(("parameters",), "parameters must be an object")
        params = {}
    for key, value in params.items():
        if key not in sc.params:
            diag.add(("parameters", key), f"unknown parameter {key!r} for scenario {name!r}")
            continue
        try:
            scenarios.coerce(key, value, sc.params[key])
        except UsageError as exc:
            diag.add(("parameters", key), str(exc))
    seed = data.get("seed", 0)
    if not _is_int(seed) or not 0 <= seed < 2 ** 64:
        diag.add(("seed",), "seed must be an integer in [0, 2^64)")
    workers = data.get("workers", 1)
    if not _is_int(workers) or workers < 1:
        diag.add(("workers",), "workers must be an integer >= 1")
    if "output" in data and not isinstance(data["output"], str):
        diag.add(("output",), "output must be a string")
    caps = data.get("caps", {})
    if not isinstance(caps, dict):
        diag.add(("caps",), "caps must be an object")
        return
    diag.unknown(caps, CAP_KEYS, ("caps",))
    if "max_n" in caps and (not _is_int(caps["max_n"]) or caps["max_n"] < 1):
        diag.add(("caps", "max_n"), "max_n must be an integer >= 1")
    if "max_runtime" in caps and (not _is_num(caps["max_runtime"]) or not caps["max_runtime"] > 0):
        diag.add(("caps", "max_runtime"), "max_runtime must be > 0 (seconds)")
    max_n = caps.get("max_n")
    if _is_int(max_n):
        for key, spec in sc.params.items():
            v = params.get(key, spec.default)
            if spec.counts and _is_num(v) and v > max_n:
                diag.add(("parameters", key) if key in params else ("caps", "max_n"),
                         f"parameter {key}={v} exceeds max_n={max_n}")


def validate_text(text: str) -> list:
    """All diagnostics for a config text (empty list = ok)."""
    try:
        data, lines = parse(text)
    except ConfigError as exc:
        return [exc]
    diag = Diagnostics(lines)
    if "scenario" in data:
        check_experiment(data, diag)
    else:
        check_simulation(data, diag)
    return diag.errors


def validate_config(path) -> list:
    with open(path) as fh:
        return validate_text(fh.read())


def load(path) -> dict:
    """Parse and validate; raises the first ConfigError."""
    with open(path) as fh:
        text = fh.read()
    errors = validate_text(text)
    if errors:
        raise errors[0]
    return json.loads(text)


def sim_config_from_dict(data: dict) -> tuple:
    """(SimConfig, initial law) from a validated simulation dict."""
    diag = Diagnostics({(): 1})
    check_simulation(data, diag)
    diag.raise_first()
    drv = data.get("driver", {"type": "brownian"})
    drv = {"type": drv} if isinstance(drv, str) else drv
    back = data.get("backend", {"type": "direct"})
    back = {"type": back} if isinstance(back, str) else back
    dim = data.get("dim", 1)
    drift_cfg = data["drift"]
    if drift_cfg["type"] == "meanfield":
        drift = K.from_config(drift_cfg["kernel"])
    else:
        drift = D.from_config({k: v for k, v in drift_cfg.items() if k != "type"})
    grid = Grid(back["half_width"], back["cells"], dim) if back["type"] == "fft" else None
    cfg = SimConfig(data["n_particles"], data["dt"], data["t_end"], drift, dim=dim,
                    seed=data.get("seed", 0), driver=drv.get("type", "brownian"),
                    alpha=drv.get("alpha"), backend=back["type"], grid=grid,
                    snapshot_times=tuple(data.get("snapshot_times", ())),
                    workers=data.get("workers", 1))
    return cfg, data.get("initial", {"type": "dirac", "x0": 0.0})
