import numpy as np
import pytest

from pglqr.lqrmodel import GaussianPolicy

from _helpers import scalar_problem

_CRITERIA: dict[str, tuple[str, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def unit_scalar():
    """``a=0, b=1, q=r=1, sigma_s=0, H=1`` with ``k=0, Sigma_a=1``."""
    return scalar_problem(), GaussianPolicy(k=0.0, sigma_a=1.0)


@pytest.fixture
def report_criterion():
    """Record a one-line measurement for the acceptance summary."""

    def record(criterion: str, detail: str) -> None:
        _CRITERIA[criterion] = ("", detail)

    return record


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid or report.when != "call":
        return
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_criterion_"):
        return
    key = name[len("test_criterion_"):]
    status = "PASS" if report.passed else "FAIL"
    _, detail = _CRITERIA.get(key, ("", ""))
    _CRITERIA[key] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    done = {k: v for k, v in _CRITERIA.items() if v[0]}
    if not done:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(done):
        status, detail = done[key]
        terminalreporter.write_line(f"{status} {key}" + (f": {detail}" if detail else ""))

