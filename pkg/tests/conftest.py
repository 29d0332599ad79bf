import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from lossycoll.transport import loopback_world, run_ranks  # noqa: E402


def run_world(n, fn, *args, timeout=60.0, **kwargs):
    """Run ``fn(comm, ...)`` on a fresh loopback world; returns (results, comms)."""
    comms = loopback_world(n, timeout=timeout)
    results = run_ranks(comms, fn, *args, timeout=timeout * 4, **kwargs)
    return results, comms


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def walk(n, seed=0, scale=1.0):
    r = np.random.default_rng(seed)
    return (np.cumsum(r.standard_normal(n)) * scale).astype(np.float32)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
