import numpy as np
import pytest

from sa_lab.systems import artstein_system, khalil_system, selector_system

# (criterion number, passed, detail) rows filled in by test_acceptance.py
ACCEPTANCE_RESULTS = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((number, title, bool(passed), detail))


@pytest.fixture(scope="session")
def selector():
    return selector_system()


@pytest.fixture(scope="session")
def khalil():
    return khalil_system()


@pytest.fixture(scope="session")
def artstein():
    return artstein_system()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:2d}. {title}: {detail}")
