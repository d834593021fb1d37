"""Binary + JSON sidecar persistence for path records and gridded densities.

Arrays go to ``<stem>.bin`` as little-endian float64 in row-major order, one
after another; ``<stem>.json`` lists each array's name, offset (in values)
and shape together with the metadata needed to read it back.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .density import GridDensity
from .errors import UsageError
from .grid import Grid
from .simulate import PathRecord

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def _write_arrays(stem: Path, arrays: list, meta: dict) -> list:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    layout, offset = [], 0
    with open(stem.with_suffix(".bin"), "wb") as fh:
        for name, a in arrays:
            a = np.ascontiguousarray(a, dtype=_DTYPE)
            fh.write(a.tobytes(order="C"))
            layout.append({"name": name, "offset": offset, "shape": list(a.shape)})
            offset += a.size
    side = {"format_version": FORMAT_VERSION, "dtype": "float64-le", "order": "row-major",
            "binary": stem.with_suffix(".bin").name, "arrays": layout, **meta}
    with open(stem.with_suffix(".json"), "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [stem.with_suffix(".bin"), stem.with_suffix(".json")]


def _read_arrays(sidecar) -> tuple:
    sidecar = Path(sidecar)
    with open(sidecar) as fh:
        meta = json.load(fh)
    if meta.get("format_version") != FORMAT_VERSION:
        raise UsageError(f"{sidecar}: unsupported format_version {meta.get('format_version')!r}")
    flat = np.fromfile(sidecar.parent / meta["binary"], dtype=_DTYPE)
    out = {}
    for item in meta["arrays"]:
        size = int(np.prod(item["shape"], dtype=np.int64))
        chunk = flat[item["offset"]:item["offset"] + size]
        if chunk.size != size:
            raise UsageError(f"{sidecar}: binary file is truncated")
        out[item["name"]] = chunk.reshape(item["shape"]).astype(float)
    return out, meta


def write_path_record(record: PathRecord, stem) -> list:
    """Persist snapshots, initial positions and noise totals; returns the two paths."""
    arrays = [("initial", record.initial)]
    arrays += [(f"snapshot_{i}", x) for i, x in enumerate(record.snapshots)]
    arrays.append(("noise_totals", record.noise_totals))
    meta = {"kind": "path_record", "times": [float(t) for t in record.times],
            "seed": record.config.seed, "config": record.config.to_dict(),
            "meta": record.meta}
    return _write_arrays(stem, arrays, meta)


def read_path_record(sidecar) -> dict:
    """Load a persisted path record as a dict of arrays plus its sidecar fields.

    The config is returned as its JSON echo; rebuilding the run objects is
    the job of :func:`mvlab.config.sim_config_from_dict`.
    """
    arrays, meta = _read_arrays(sidecar)
    if meta.get("kind") != "path_record":
        raise UsageError(f"{sidecar} is not a path record")
    snaps = [arrays[f"snapshot_{i}"] for i in range(len(meta["times"]))]
    return {"times": meta["times"], "snapshots": snaps, "initial": arrays["initial"],
            "noise_totals": arrays["noise_totals"], "config": meta["config"],
            "seed": meta["seed"], "meta": meta.get("meta", {})}


def write_density(f: GridDensity, stem) -> list:
    meta = {"kind": "grid_density", "grid": f.grid.to_dict(),
            "cell_width": f.grid.cell_width, "provenance": f.meta}
    return _write_arrays(stem, [("values", f.values)], meta)


def read_density(sidecar) -> GridDensity:
    arrays, meta = _read_arrays(sidecar)
    if meta.get("kind") != "grid_density":
        raise UsageError(f"{sidecar} is not a grid density")
    g = meta["grid"]
    return GridDensity(Grid(g["half_width"], g["cells"], g["dim"]), arrays["values"],
                       meta.get("provenance", {}))


def sidecar_path(path) -> Path:
    p = Path(os.fspath(path))
    return p if p.suffix == ".json" else p.with_suffix(".json")
