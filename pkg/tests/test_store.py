import json

import numpy as np
import pytest

from mvlab import kernels as K
from mvlab.density import kde
from mvlab.errors import UsageError
from mvlab.grid import Grid
from mvlab.simulate import SimConfig, simulate
from mvlab.store import read_density, read_path_record, write_density, write_path_record


def test_path_record_round_trip(tmp_path):
    cfg = SimConfig(64, 0.01, 0.2, K.sign_kernel(), seed=5, snapshot_times=(0.1, 0.2))
    rec = simulate(cfg, {"type": "normal", "std": 0.5})
    paths = write_path_record(rec, tmp_path / "paths")
    assert [p.name for p in paths] == ["paths.bin", "paths.json"]
    back = read_path_record(tmp_path / "paths.json")
    assert back["times"] == [0.1, 0.2]
    for a, b in zip(back["snapshots"], rec.snapshots):
        assert np.array_equal(a, b)
    assert np.array_equal(back["initial"], rec.initial)
    assert np.array_equal(back["noise_totals"], rec.noise_totals)
    assert back["config"] == cfg.to_dict() and back["seed"] == 5


def test_binary_layout(tmp_path):
    cfg = SimConfig(3, 0.1, 0.1, K.sign_kernel())
    rec = simulate(cfg)
    write_path_record(rec, tmp_path / "r")
    side = json.loads((tmp_path / "r.json").read_text())
    assert side["dtype"] == "float64-le" and side["order"] == "row-major"
    raw = np.fromfile(tmp_path / "r.bin", dtype="<f8")
    off = {a["name"]: a["offset"] for a in side["arrays"]}
    assert np.array_equal(raw[off["snapshot_0"]:off["snapshot_0"] + 3], rec.final[:, 0])


def test_density_round_trip(tmp_path):
    g = Grid(4.0, 128)
    f = kde(np.random.default_rng(0).normal(size=500), 0.3, g)
    write_density(f, tmp_path / "d")
    back = read_density(tmp_path / "d.json")
    assert back.grid == g
    assert np.array_equal(back.values, f.values)
    assert back.meta["bandwidth"] == 0.3


def test_reader_rejects_wrong_kind_and_truncation(tmp_path):
    g = Grid(4.0, 16)
    f = kde(np.zeros(3), 0.5, g)
    write_density(f, tmp_path / "d")
    with pytest.raises(UsageError):
        read_path_record(tmp_path / "d.json")
    with open(tmp_path / "d.bin", "r+b") as fh:
        fh.truncate(8)
    with pytest.raises(UsageError, match="truncated"):
        read_density(tmp_path / "d.json")
