import json
from importlib import resources

import pytest

from mvlab import scenarios as S
from mvlab.errors import ResourceLimitError, UsageError


def test_schemas_file_is_current():
    shipped = json.loads(resources.files("mvlab").joinpath("schemas.json").read_text())
    assert shipped == json.loads(json.dumps(S.describe()))


def test_registry_names():
    assert sorted(S.REGISTRY) == ["kink", "malliavin", "oracle", "singular", "slopes",
                                  "stable", "table"]


@pytest.mark.parametrize("name", sorted(S.REGISTRY))
def test_tables_match_declared_columns(name, small):
    sc = S.get(name)
    res = sc.run(S.resolve_params(sc, small[name]), S.RunContext(seed=1))
    assert {t.name for t in res.tables} == set(sc.tables)
    for t in res.tables:
        assert t.columns == sc.tables[t.name]
        assert t.rows and all(len(r) == len(t.columns) for r in t.rows)
    assert res.passed in (None, True, False)
    if res.passed is not None:
        assert res.passed == all(res.checks.values())


def test_resolve_params_errors():
    sc = S.get("oracle")
    with pytest.raises(UsageError, match="unknown parameter"):
        S.resolve_params(sc, {"nope": 1})
    with pytest.raises(UsageError, match="> 0"):
        S.resolve_params(sc, {"n": -5})
    with pytest.raises(UsageError, match="integer"):
        S.resolve_params(sc, {"n": 2.5})
    with pytest.raises(UsageError, match="one of"):
        S.resolve_params(S.get("table"), {"kernel": "C2"})
    with pytest.raises(UsageError):
        S.get("nope")


def test_runtime_cap():
    ctx = S.RunContext(max_runtime=1e-9)
    with pytest.raises(ResourceLimitError):
        ctx.checkpoint("anything")


def test_order_check_logic():
    rows = [("a", 0, 1.0, 1.0), ("b", 1, 1.0, 2.0), ("a", 0, 2.0, 1.1), ("b", 1, 2.0, 2.1)]
    assert S.table_order_check(rows, 0.2) == {"monotone": True, "bandwidth_stable": True}
    dec = [("a", 0, 1.0, 2.0), ("b", 1, 1.0, 1.5)]
    assert not S.table_order_check(dec, 0.2)["monotone"]
    flip = [("a", 0, 1.0, 1.0), ("b", 1, 1.0, 1.1), ("a", 0, 2.0, 1.0), ("b", 1, 2.0, 2.0)]
    assert not S.table_order_check(flip, 0.2)["bandwidth_stable"]


def test_class_ranks_follow_the_ladder():
    ranks = {k: v[0] for k, v in S.TABLE_CLASSES.items()}
    assert ranks["moll_dist"] < ranks["Lp"] == ranks["Linf"] < ranks["Holder"] < ranks["C1b"]
