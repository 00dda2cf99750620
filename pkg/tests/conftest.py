import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gram_residual(R, X):
    G = X.T @ X
    return np.linalg.norm(R.T @ R - G) / max(np.linalg.norm(G), np.finfo(float).tiny)


def random_cores(dims, ranks, seed):
    r = np.random.default_rng(seed)
    return [r.standard_normal((ranks[j], n, ranks[j + 1])) for j, n in enumerate(dims)]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
