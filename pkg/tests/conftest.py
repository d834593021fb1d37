import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash.get(ACCEPTANCE_KEY, []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, text in lines:
            terminalreporter.write_line(text)


@pytest.fixture
def criterion(request):
    """report(number, title, ok, detail): record a pass/fail line, then assert ok."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def report(number, title, ok, detail=""):
        text = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append((number, text))
        print(text)
        assert ok, text

    return report


@pytest.fixture
def outdir(tmp_path, monkeypatch):
    """Isolated output root; MVLAB_OUTPUT is cleared so --output wins."""
    monkeypatch.delenv("MVLAB_OUTPUT", raising=False)
    return tmp_path / "runs"


# parameter overrides that make every scenario run in a few seconds
SMALL = {
    "oracle": {"n": 2000, "dt": 0.01, "cells": 256},
    "kink": {"n": 2000, "dt": 0.01, "cells": 1024},
    "slopes": {"samples": 100, "eps_exponents": [4, 5, 6], "increment_samples": 200,
               "lags": [1e-3, 1e-2, 1e-1]},
    "singular": {"n": 2000, "dt": 0.01, "cells": 2048},
    "stable": {"n": 2000, "dt": 0.01, "draws": 20000, "half_width": 64.0, "cells": 4096},
    "malliavin": {"samples": 200, "dt": 0.01, "check_samples": 8, "bound_deltas": [0.05]},
    "table": {"n": 2000, "dt": 0.01, "cells": 2048, "kernel": "C1b"},
}


@pytest.fixture
def small():
    return {k: dict(v) for k, v in SMALL.items()}
