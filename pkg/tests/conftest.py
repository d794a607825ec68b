import logging
import time

import pytest

from cbf_invert import inference
from cbf_invert.harness.config import HarnessConfig
from cbf_invert.harness.montecarlo import run_monte_carlo

# criterion number -> (passed, detail), filled by the acceptance tests
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)


@pytest.fixture(autouse=True)
def _sign_structure_guard():
    """Every closed-form inversion in the suite must see A > 0 and C < 0."""
    before = inference.sign_audit["violations"]
    yield
    assert inference.sign_audit["violations"] == before, "closed-form sign structure violated"


@pytest.fixture(autouse=True)
def _quiet_premise_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="cbf_invert.inference")
    yield


@pytest.fixture(scope="session")
def mc_reports():
    """Default 20-rollout matrix, shared by every test that scores it; returns (reports, seconds)."""
    t0 = time.perf_counter()
    reports = run_monte_carlo(HarnessConfig(), 20)
    return reports, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
