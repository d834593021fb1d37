"""Command-line entry point: ``mvlab <command> ...``.

Every command writes into ``<output>/<command>-<hash>/`` where ``hash`` is the
config hash, and finishes with a ``manifest.json`` listing each file it wrote.
The output root comes from ``--output``, else $MVLAB_OUTPUT, else
./mvlab_output.

Exit codes: 0 ok, 2 configuration or usage error, 3 numerical failure
(blowup, box escape, too few resolved blocks), 4 the experiment ran but its
check failed, 5 a resource cap was hit.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from . import drifts as D
from . import scenarios as S
from .density import histogram, kde, silverman
from .errors import (ConfigError, DomainEscapeError, InsufficientBlocksError,
                     ResourceLimitError, SimulationBlowupError, UsageError)
from .grid import Grid
from .linearize import run_linearization
from .malliavin import inverse_moment_estimate
from .oracle import density_on_grid, kink_jump
from .regularity import analyze, reference_function
from .simulate import simulate
from .store import read_density, read_path_record, write_density, write_path_record

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK_FAILED, EXIT_RESOURCE = 0, 2, 3, 4, 5
DEFAULT_OUTPUT = "mvlab_output"

log = logging.getLogger("mvlab")


# ---------------------------------------------------------------- output

def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical(obj).encode()).hexdigest()


def format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class RunWriter:
    """Single writer for one run directory; ``finish`` writes the manifest."""

    def __init__(self, root, kind: str, config: dict, seed: int | None):
        self.kind = kind
        self.config = config
        self.seed = seed
        self.hash = config_hash({"kind": kind, "config": config, "seed": seed})
        self.dir = Path(root) / f"{kind}-{self.hash[:12]}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self._clear_previous()
        self.files = []
        self.started = _now()

    def _clear_previous(self):
        old = self.dir / "manifest.json"
        if old.exists():
            try:
                listed = json.loads(old.read_text()).get("files", [])
            except json.JSONDecodeError:
                listed = []
            for item in listed:
                p = self.dir / item["path"]
                if p.exists():
                    p.unlink()
            old.unlink()

    def register(self, path) -> Path:
        p = Path(path)
        if p not in self.files:
            self.files.append(p)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.dir / name
        p.write_text(text)
        return self.register(p)

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")

    def write_table(self, table: S.Table) -> Path:
        p = self.dir / f"{table.name}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.columns)
            for row in table.rows:
                w.writerow([format_cell(v) for v in row])
        return self.register(p)

    def finish(self, **extra) -> Path:
        files = []
        for p in self.files:
            data = p.read_bytes()
            files.append({"path": p.relative_to(self.dir).as_posix(), "bytes": len(data),
                          "sha256": hashlib.sha256(data).hexdigest()})
        manifest = {"format_version": 1, "kind": self.kind, "config_hash": self.hash,
                    "seed": self.seed, "config": self.config, "version": __version__,
                    "started": self.started, "finished": _now(), "files": files, **extra}
        p = self.dir / "manifest.json"
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        return p


def output_root(args) -> Path:
    return Path(args.output or os.environ.get("MVLAB_OUTPUT") or DEFAULT_OUTPUT)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _pairs(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _parse_value(v.strip())
    return out


def _drift(args):
    return D.by_name(args.drift, **_pairs(args.drift_param))


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    data = C.load(args.config) if args.config else {
        "n_particles": 10_000, "dt": 1e-3, "t_end": 1.0,
        "drift": {"type": "meanfield", "kernel": {"class": "sign"}}}
    over = {"n_particles": args.n, "dt": args.dt, "t_end": args.t_end, "dim": args.dim,
            "seed": args.seed, "workers": args.workers}
    data.update({k: v for k, v in over.items() if v is not None})
    if args.kernel:
        data["drift"] = {"type": "meanfield", "kernel": _parse_value(args.kernel)}
    if args.drift:
        data["drift"] = {"type": "external", "name": args.drift, **_pairs(args.drift_param)}
    if args.driver:
        data["driver"] = {"type": args.driver}
        if args.alpha is not None:
            data["driver"]["alpha"] = args.alpha
    if args.backend:
        data["backend"] = {"type": args.backend}
        if args.backend == "fft":
            data["backend"].update(half_width=args.half_width, cells=args.cells)
    if args.snapshots:
        data["snapshot_times"] = args.snapshots
    cfg, initial = C.sim_config_from_dict(data)
    record = simulate(cfg, initial)
    w = RunWriter(output_root(args), "simulate", {**cfg.to_dict(), "initial": initial}, cfg.seed)
    record.meta["config_hash"] = w.hash
    for p in write_path_record(record, w.dir / "paths"):
        w.register(p)
    w.finish()
    print(w.dir)
    return EXIT_OK


def cmd_density(args) -> int:
    rec = read_path_record(_sidecar(args.input))
    times = rec["times"]
    k = len(times) - 1 if args.time is None else int(np.argmin(np.abs(np.asarray(times) - args.time)))
    x = rec["snapshots"][k]
    grid = Grid(args.half_width, args.cells, x.shape[1])
    conf = {"input": str(args.input), "time": times[k], "estimator": args.estimator,
            "half_width": args.half_width, "cells": args.cells}
    if args.estimator == "histogram":
        f = histogram(x, grid)
    else:
        h = args.bandwidth if args.bandwidth else silverman(x) * args.bandwidth_mult
        conf["bandwidth"] = h
        f = kde(x, h, grid)
    w = RunWriter(output_root(args), "density", conf, rec["seed"])
    f.meta.update(source=str(args.input), time=times[k], config_hash=w.hash)
    for p in write_density(f, w.dir / "density"):
        w.register(p)
    w.finish()
    print(w.dir)
    return EXIT_OK


def _sidecar(path) -> Path:
    p = Path(path)
    if p.is_dir():
        cands = sorted(q for q in p.glob("*.json") if q.name != "manifest.json")
        if len(cands) != 1:
            raise UsageError(f"{p}: expected exactly one data sidecar, found {len(cands)}")
        return cands[0]
    return p if p.suffix == ".json" else p.with_suffix(".json")


def cmd_regularity(args) -> int:
    if args.reference:
        f = reference_function(args.reference, Grid(args.half_width, args.cells))
        source = f"reference:{args.reference}"
    elif args.input:
        f = read_density(_sidecar(args.input))
        source = str(args.input)
    else:
        raise UsageError("give --input or --reference")
    sem = [tuple(float(v) for v in s.split(",")) for s in args.seminorm or ()]
    sem = [(p, q, s, int(m)) for p, q, s, m in sem]
    window = tuple(args.window) if args.window else None
    rep = analyze(f, args.p, args.levels, window, sem, tuple(args.kink_at or ()),
                  tuple(args.kink_scales), args.smoothing, source=source)
    conf = {"source": source, "p": args.p, "levels": args.levels, "window": window,
            "seminorms": sem, "kink_at": args.kink_at, "kink_scales": args.kink_scales,
            "smoothing": args.smoothing}
    w = RunWriter(output_root(args), "regularity", conf, None)
    w.write_text("report.json", rep.to_json() + "\n")
    w.write_text("blocks.csv", rep.to_csv())
    w.finish()
    fit = rep.fitted_index
    print(f"index: {fit if fit is not None else 'insufficient blocks'}")
    print(w.dir)
    return EXIT_OK


def cmd_oracle(args) -> int:
    params = {"sign0": {"t": args.t}, "signx": {"t": args.t, "x0": args.x0},
              "gaussian": {"mean": args.mean, "var": args.var},
              "ou": {"lam": args.lam, "t": args.t, "x0": args.x0}}[args.kind]
    grid = Grid(args.half_width, args.cells)
    f = density_on_grid(grid, args.kind, **params)
    conf = {"kind": args.kind, **params, "half_width": args.half_width, "cells": args.cells}
    w = RunWriter(output_root(args), "oracle", conf, None)
    f.meta["config_hash"] = w.hash
    for p in write_density(f, w.dir / "density"):
        w.register(p)
    w.write_table(S.Table("values", ["y", "density"],
                          [[y, v] for y, v in zip(grid.centers(), f.values)]))
    extra = {"mass": f.mass}
    if args.kind == "sign0":
        extra["kink_jump"] = kink_jump(args.t)
    w.write_json("summary.json", extra)
    w.finish()
    print(json.dumps(extra))
    print(w.dir)
    return EXIT_OK


def cmd_linearize(args) -> int:
    eps = args.eps or [2.0 ** -k for k in args.eps_exponents]
    drift = _drift(args)
    res = run_linearization(args.order, drift, args.t, eps, args.samples, args.seed,
                            dt_check=args.dt_check, workers=args.workers)
    conf = {"order": args.order, "drift": drift.to_config(), "t": args.t, "epsilons": eps,
            "samples": args.samples, "dt_check": args.dt_check}
    w = RunWriter(output_root(args), "linearize", conf, args.seed)
    w.write_text("result.json", res.to_json() + "\n")
    w.write_text("ae.csv", res.to_csv())
    w.finish()
    print(f"slope {res.fitted_slope:.3f} +/- {res.slope_stderr:.3f}")
    print(w.dir)
    return EXIT_OK


def cmd_malliavin(args) -> int:
    drift = _drift(args)
    r = inverse_moment_estimate(drift, args.t, args.p, args.samples, args.seed, args.dt,
                                workers=args.workers)
    conf = {"drift": drift.to_config(), "t": args.t, "dt": args.dt, "p": args.p,
            "samples": args.samples}
    w = RunWriter(output_root(args), "malliavin", conf, args.seed)
    w.write_table(S.Table("dets", ["sample_id", "det_gamma"],
                          [[i, v] for i, v in enumerate(r.dets)]))
    w.write_json("summary.json", r.to_dict())
    w.finish()
    print(json.dumps(r.to_dict()))
    print(w.dir)
    return EXIT_OK


def cmd_experiment(args) -> int:
    data = C.load(args.config) if args.config else {}
    if args.scenario:
        data["scenario"] = args.scenario
    if "scenario" not in data:
        raise UsageError("give --scenario or a config file with a 'scenario' key")
    params = dict(data.get("parameters", {}))
    params.update(_pairs(args.set))
    seed = args.seed if args.seed is not None else data.get("seed", 0)
    workers = args.workers if args.workers is not None else data.get("workers", 1)
    caps = dict(data.get("caps", {}))
    if args.max_n is not None:
        caps["max_n"] = args.max_n
    if args.max_runtime is not None:
        caps["max_runtime"] = args.max_runtime
    full = {"scenario": data["scenario"], "parameters": params, "seed": seed,
            "workers": workers, "caps": caps}
    diag = C.Diagnostics({(): 1})
    C.check_experiment(full, diag)
    diag.raise_first()
    sc = S.get(data["scenario"])
    resolved = S.resolve_params(sc, params)
    if args.output is None and "output" in data:
        args.output = data["output"]
    ctx = S.RunContext(seed, workers, caps.get("max_runtime"), log.info)
    result = sc.run(resolved, ctx)
    # workers change nothing numerically, so they stay out of the hash
    w = RunWriter(output_root(args), sc.name, {"parameters": resolved}, seed)
    for t in result.tables:
        w.write_table(t)
    w.write_json("summary.json", {"scenario": sc.name, "config_hash": w.hash,
                                  "passed": result.passed, "checks": result.checks,
                                  "summary": result.summary})
    w.finish(scenario=sc.name, passed=result.passed)
    status = {None: "done", True: "PASS", False: "FAIL"}[result.passed]
    print(f"{sc.name}: {status}")
    print(w.dir)
    return EXIT_CHECK_FAILED if result.passed is False else EXIT_OK


def cmd_validate(args) -> int:
    try:
        errors = C.validate_config(args.file)
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    if not errors:
        print("ok")
        return EXIT_OK
    for e in errors:
        print(f"{args.file}: {e}")
    return EXIT_CONFIG


# ---------------------------------------------------------------- parser

def _add_drift_flags(p, default=None):
    p.add_argument("--drift", default=default, help="named drift (sign, tanh, linear, ...)")
    p.add_argument("--drift-param", action="append", metavar="KEY=VALUE",
                   help="drift parameter, repeatable (e.g. delta=0.2)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvlab", description=__doc__.split("\n")[0])
    ap.add_argument("--output", help="output root (default $MVLAB_OUTPUT or ./mvlab_output)")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a particle simulation")
    p.add_argument("--config", help="simulation JSON file")
    p.add_argument("--n", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--kernel", help='mean-field kernel as JSON, e.g. \'{"class": "sign"}\'')
    _add_drift_flags(p)
    p.add_argument("--driver", choices=("brownian", "stable"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--backend", choices=("direct", "fft"))
    p.add_argument("--half-width", type=float, default=8.0)
    p.add_argument("--cells", type=int, default=4096)
    p.add_argument("--snapshots", type=float, nargs="+")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("density", help="estimate a gridded density from a path record")
    p.add_argument("--input", required=True, help="path record sidecar or run directory")
    p.add_argument("--time", type=float, help="snapshot time (default: last)")
    p.add_argument("--estimator", choices=("kde", "histogram"), default="kde")
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--bandwidth-mult", type=float, default=1.0)
    p.add_argument("--half-width", type=float, default=8.0)
    p.add_argument("--cells", type=int, default=1024)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("regularity", help="Besov / Littlewood-Paley diagnostics")
    p.add_argument("--input", help="density sidecar or run directory")
    p.add_argument("--reference", choices=("hat", "indicator", "gaussian", "abs"))
    p.add_argument("--half-width", type=float, default=8.0)
    p.add_argument("--cells", type=int, default=4096)
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--levels", type=int)
    p.add_argument("--window", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--seminorm", action="append", metavar="P,Q,S,M",
                   help="seminorm parameters, repeatable (inf allowed)")
    p.add_argument("--kink-at", type=float, nargs="+")
    p.add_argument("--kink-scales", type=float, nargs=2, default=(0.15, 0.3))
    p.add_argument("--smoothing", type=float, default=0.0)
    p.set_defaults(func=cmd_regularity)

    p = sub.add_parser("oracle", help="emit a closed-form density onto a grid")
    p.add_argument("--kind", choices=("sign0", "signx", "gaussian", "ou"), default="sign0")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--mean", type=float, default=0.0)
    p.add_argument("--var", type=float, default=1.0)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--half-width", type=float, default=8.0)
    p.add_argument("--cells", type=int, default=1024)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("linearize", help="coupled linearization errors and slope")
    p.add_argument("--order", type=int, choices=(0, 1, 2), required=True)
    _add_drift_flags(p, "tanh")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--eps", type=float, nargs="+")
    p.add_argument("--eps-exponents", type=float, nargs="+", default=[4, 5, 6, 7, 8, 9, 10])
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt-check", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_linearize)

    p = sub.add_parser("malliavin", help="Malliavin matrix determinants and inverse moment")
    _add_drift_flags(p, "mollified_sign")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_malliavin)

    p = sub.add_parser("experiment", help="run a named scenario")
    p.add_argument("--scenario", choices=sorted(S.REGISTRY))
    p.add_argument("--config", help="experiment JSON file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a scenario parameter (value parsed as JSON)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--max-n", type=int)
    p.add_argument("--max-runtime", type=float)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("validate", help="check a config file")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationBlowupError, DomainEscapeError, InsufficientBlocksError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ResourceLimitError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
