import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from helpers import small_vocab  # noqa: E402

from sgenrich.autodiff import precision  # noqa: E402

CRITERIA = {
    1: "gradient correctness",
    2: "GConv oracle equivalence",
    3: "equivariance suite",
    4: "structural invariants",
    5: "supervision/loss identities",
    6: "parameter-partition checks",
    7: "desk-scale training dynamics",
    8: "metric oracle",
    9: "determinism and round-trips",
    10: "VG ingestion fixture",
}
_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        state = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        _outcomes.setdefault(n, []).append((item.name, state))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        states = [s for _, s in _outcomes[n]]
        overall = "FAIL" if "FAIL" in states else ("SKIP" if all(s == "SKIP" for s in states) else "PASS")
        passed = states.count("PASS")
        notes = [f"{name}={s}" for name, s in _outcomes[n] if s != "PASS"]
        detail = "; ".join([f"{passed}/{len(states)} tests passed"] + notes)
        terminalreporter.write_line(f"criterion {n:>2} {CRITERIA.get(n, ''):<30} {overall}  ({detail})")


@pytest.fixture
def vocab():
    return small_vocab()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    with precision(np.float64):
        yield
