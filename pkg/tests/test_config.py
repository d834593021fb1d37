import json

import pytest
from hypothesis import given, strategies as st

from mvlab import config as C
from mvlab import drifts as D
from mvlab import kernels as K
from mvlab.errors import ConfigError
from mvlab.grid import Grid
from mvlab.simulate import SimConfig

VALID = """{
  "n_particles": 1000,
  "dt": 0.001,
  "t_end": 1.0,
  "seed": 4,
  "drift": {"type": "meanfield", "kernel": {"class": "sign"}},
  "snapshot_times": [0.5, 1.0]
}
"""


def _errors(text):
    return C.validate_text(text)


def test_valid_file(tmp_path):
    p = tmp_path / "sim.json"
    p.write_text(VALID)
    assert C.validate_config(p) == []
    cfg, init = C.sim_config_from_dict(C.load(p))
    assert cfg.n_particles == 1000 and cfg.snapshot_times == (0.5, 1.0)
    assert init == {"type": "dirac", "x0": 0.0}


def test_dt_zero_reported_on_its_line():
    errs = _errors(VALID.replace('"dt": 0.001', '"dt": 0'))
    assert len(errs) == 1
    assert errs[0].line == 3
    assert "dt must be > 0" in str(errs[0])


def test_stable_in_two_d_is_rejected():
    text = VALID.replace('"seed": 4,', '"seed": 4,\n  "dim": 2,\n  "driver": {"type": "stable", "alpha": 1.5},')
    text = text.replace('{"class": "sign"}', '{"class": "sign", "dim": 2}')
    errs = _errors(text)
    assert any("only available in dim = 1" in str(e) and e.line == 7 for e in errs)


def test_malformed_json_line():
    errs = _errors('{\n  "dt": 0.1,\n  "t_end": 1.0\n  "x": 1\n}')
    assert len(errs) == 1 and errs[0].line == 4 and "malformed JSON" in str(errs[0])


def test_unknown_keys_are_listed_with_lines():
    text = VALID.replace('"seed": 4,', '"seed": 4,\n  "colour": "red",')
    errs = _errors(text)
    assert [(e.line, "colour" in str(e)) for e in errs] == [(6, True)]


def test_nested_error_line():
    text = VALID.replace('"snapshot_times": [0.5, 1.0]', '"snapshot_times": [\n    0.5,\n    2.0\n  ]')
    errs = _errors(text)
    assert len(errs) == 1 and errs[0].line == 9


def test_load_raises_first_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(VALID.replace('"t_end": 1.0', '"t_end": -1'))
    with pytest.raises(ConfigError, match="line 4"):
        C.load(p)


def test_experiment_checks():
    ok = '{"scenario": "oracle", "parameters": {"n": 500}, "seed": 1}'
    assert _errors(ok) == []
    bad = '{\n "scenario": "oracle",\n "parameters": {"n": 500, "bogus": 1}\n}'
    errs = _errors(bad)
    assert len(errs) == 1 and errs[0].line == 3 and "bogus" in str(errs[0])
    assert "unknown scenario" in str(_errors('{"scenario": "nope"}')[0])
    capped = '{"scenario": "oracle", "parameters": {"n": 500},\n "caps": {"max_n": 100}}'
    assert "exceeds max_n" in str(_errors(capped)[0])


@pytest.mark.parametrize("cfg", [
    SimConfig(100, 0.01, 1.0, K.sign_kernel(), seed=3, snapshot_times=(0.5, 1.0)),
    SimConfig(100, 0.01, 1.0, K.mollify(K.power_kernel(0.3), 0.1), backend="fft",
              grid=Grid(8.0, 256)),
    SimConfig(100, 0.01, 1.0, K.smooth_kernel(0.5, 2), dim=2, workers=2),
    SimConfig(100, 0.01, 1.0, K.sign_kernel(), driver="stable", alpha=1.5),
    SimConfig(100, 0.01, 1.0, D.linear(-1.0)),
], ids=["sign", "mollified-fft", "2d", "stable", "external"])
def test_config_round_trip(cfg):
    d = json.loads(json.dumps(cfg.to_dict()))
    assert C.validate_text(json.dumps(d)) == []
    back, _ = C.sim_config_from_dict(d)
    assert back.to_dict() == cfg.to_dict()


@given(keys=st.lists(st.text("abcdefgh", min_size=1, max_size=5), min_size=1, max_size=6,
                     unique=True))
def test_key_lines_one_key_per_line(keys):
    text = "{\n" + ",\n".join(f'  "{k}": [\n    1,\n    2\n  ]' for k in keys) + "\n}"
    lines = C.key_lines(text)
    for i, k in enumerate(keys):
        assert lines[(k,)] == 2 + 4 * i
        assert lines[(k, 1)] == 4 + 4 * i
