import hashlib
import json
from pathlib import Path

import pytest

from mvlab.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def run_dir(out: str) -> Path:
    return Path(out.strip().splitlines()[-1])


def assert_no_orphans(root: Path):
    """Every file under root is listed by exactly one manifest, with its checksum."""
    listed = {}
    for m in root.rglob("manifest.json"):
        for item in json.loads(m.read_text())["files"]:
            p = m.parent / item["path"]
            assert p not in listed
            listed[p] = item
            assert hashlib.sha256(p.read_bytes()).hexdigest() == item["sha256"]
    files = {p for p in root.rglob("*") if p.is_file() and p.name != "manifest.json"}
    assert files == set(listed)


def test_pipeline(outdir, capsys):
    code, out, _ = run(capsys, "--output", outdir, "simulate", "--n", 2000, "--dt", 0.01,
                       "--t-end", 0.5, "--seed", 3)
    assert code == 0
    sim = run_dir(out)
    assert sim.name.startswith("simulate-") and len(sim.name) == len("simulate-") + 12
    code, out, _ = run(capsys, "--output", outdir, "density", "--input", sim)
    assert code == 0
    dens = run_dir(out)
    code, out, _ = run(capsys, "--output", outdir, "regularity", "--input", dens,
                       "--kink-at", 0.0, "--seminorm", "1,inf,1.5,2")
    assert code == 0 and out.startswith("index:")
    rep = json.loads((run_dir(out) / "report.json").read_text())
    assert rep["seminorms"][0]["s"] == 1.5
    manifest = json.loads((sim / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["config_hash"].startswith(sim.name[-12:])
    assert {"version", "started", "finished", "files"} <= set(manifest)
    assert_no_orphans(outdir)


def test_env_output_root(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("MVLAB_OUTPUT", str(tmp_path / "env"))
    code, out, _ = run(capsys, "oracle", "--cells", 256)
    assert code == 0
    assert run_dir(out).parent == tmp_path / "env"
    assert_no_orphans(tmp_path / "env")


def test_oracle_command(outdir, capsys):
    code, out, _ = run(capsys, "--output", outdir, "oracle", "--kind", "sign0")
    assert json.loads(out.splitlines()[0])["kink_jump"] == pytest.approx(-4.333261882350746)
    lines = (run_dir(out) / "values.csv").read_text().splitlines()
    assert lines[0] == "y,density" and len(lines) == 1025


def test_linearize_and_malliavin_commands(outdir, capsys):
    code, out, _ = run(capsys, "--output", outdir, "linearize", "--order", 1, "--samples", 50,
                       "--eps-exponents", 3, 4, 5)
    assert code == 0 and out.startswith("slope")
    code, out, _ = run(capsys, "--output", outdir, "malliavin", "--samples", 50, "--dt", 0.01,
                       "--drift-param", "delta=0.2")
    assert code == 0
    assert json.loads(out.splitlines()[0])["n_samples"] == 50
    assert_no_orphans(outdir)


def test_validate(tmp_path, capsys):
    good = tmp_path / "good.json"
    good.write_text('{"n_particles": 10, "dt": 0.1, "t_end": 1.0,\n'
                    ' "drift": {"type": "meanfield", "kernel": {"class": "sign"}}}')
    assert run(capsys, "validate", good)[0] == 0
    bad = tmp_path / "bad.json"
    bad.write_text(good.read_text().replace('"dt": 0.1', '"dt": 0'))
    code, out, _ = run(capsys, "validate", bad)
    assert code == 2 and "line 1: dt must be > 0" in out
    assert run(capsys, "validate", tmp_path / "missing.json")[0] == 2


def test_config_error_exit_code(outdir, tmp_path, capsys):
    cfg = tmp_path / "exp.json"
    cfg.write_text('{\n  "scenario": "oracle",\n  "parameters": {"n": 0}\n}')
    code, _, err = run(capsys, "--output", outdir, "experiment", "--config", cfg)
    assert code == 2 and "line 3" in err
    assert run(capsys, "--output", outdir, "experiment", "--scenario", "oracle",
               "--set", "bogus=1")[0] == 2
    with pytest.raises(SystemExit) as exc:
        main(["experiment", "--scenario", "nope"])
    assert exc.value.code == 2


def test_numerical_failure_exit_code(outdir, capsys):
    code, _, err = run(capsys, "--output", outdir, "simulate", "--n", 100, "--dt", 0.01,
                       "--t-end", 1.0, "--backend", "fft", "--half-width", 0.25,
                       "--cells", 64)
    assert code == 3 and "numerical failure" in err


def test_check_failure_exit_code(outdir, capsys, small):
    sets = [f"{k}={json.dumps(v)}" for k, v in small["kink"].items()] + ["ratio_max=1e-9"]
    argv = ["--output", outdir, "experiment", "--scenario", "kink"]
    for s in sets:
        argv += ["--set", s]
    code, out, _ = run(capsys, *argv)
    assert code == 4 and out.startswith("kink: FAIL")
    summary = json.loads((run_dir(out) / "summary.json").read_text())
    assert summary["passed"] is False


def test_resource_cap_exit_code(outdir, capsys):
    code, _, err = run(capsys, "--output", outdir, "experiment", "--scenario", "oracle",
                       "--max-runtime", 1e-9)
    assert code == 5 and "resource cap" in err
    code, _, err = run(capsys, "--output", outdir, "experiment", "--scenario", "oracle",
                       "--max-n", 10)
    assert code == 2 and "exceeds max_n" in err


def _experiment(capsys, root, name, params, workers=1):
    argv = ["--output", root, "experiment", "--scenario", name, "--seed", 7,
            "--workers", workers]
    for k, v in params.items():
        argv += ["--set", f"{k}={json.dumps(v)}"]
    code, out, _ = run(capsys, *argv)
    assert code in (0, 4)
    return run_dir(out)


def test_rerun_replaces_previous_files(outdir, capsys, small):
    d1 = _experiment(capsys, outdir, "oracle", small["oracle"])
    first = {p.name: p.read_bytes() for p in d1.glob("*.csv")}
    stale = d1 / "old.csv"
    stale.write_text("x\n")
    m = json.loads((d1 / "manifest.json").read_text())
    m["files"].append({"path": "old.csv", "bytes": 2, "sha256": ""})
    (d1 / "manifest.json").write_text(json.dumps(m))
    d2 = _experiment(capsys, outdir, "oracle", small["oracle"])
    assert d1 == d2 and not stale.exists()
    assert {p.name: p.read_bytes() for p in d2.glob("*.csv")} == first
    assert_no_orphans(outdir)


@pytest.mark.parametrize("name", ["oracle", "kink", "malliavin"])
def test_csv_identical_across_workers(tmp_path, capsys, small, name):
    a = _experiment(capsys, tmp_path / "a", name, small[name], workers=1)
    b = _experiment(capsys, tmp_path / "b", name, small[name], workers=2)
    assert a.name == b.name
    csv_a = sorted(a.glob("*.csv"))
    assert csv_a
    for p in csv_a:
        assert p.read_bytes() == (b / p.name).read_bytes()
