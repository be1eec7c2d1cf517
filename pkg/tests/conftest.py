import os
import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bayesmal.data import Dataset

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _ACCEPTANCE[report.nodeid] = report.outcome
    elif "test_acceptance.py" in report.nodeid and report.failed:
        _ACCEPTANCE[report.nodeid] = "failed"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    def order(item):
        m = re.search(r"_ac(\d+)_", item[0])
        return (int(m.group(1)) if m else 0, item[0])

    for nodeid, outcome in sorted(_ACCEPTANCE.items(), key=order):
        name = nodeid.split("::")[-1]
        verdict = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{verdict}  {name}")


@pytest.fixture
def separable():
    """Two-feature linearly separable set: malware iff x0 > x1 (binary features)."""
    rng = np.random.default_rng(5)
    rows, labels = [], []
    for _ in range(120):
        lab = int(rng.integers(2))
        rows.append([1.0, 0.0, *rng.integers(0, 2, 2)] if lab else [0.0, 1.0, *rng.integers(0, 2, 2)])
        labels.append(lab)
    return Dataset.from_dense(np.array(rows, dtype=float), labels, provenance="toy")
