import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from capwarden import _kernels  # noqa: E402
from capwarden.capabilities import default_mapping  # noqa: E402

DATA = Path(__file__).parent / "data"

_acceptance_results = {}


@pytest.fixture(scope="session")
def mapping():
    return default_mapping()


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(params=sorted(_kernels.available_backends()))
def kernels(request):
    """Each importable kernel backend in turn."""
    return _kernels.available_backends()[request.param]


def pytest_runtest_logreport(report):
    criterion = dict(report.user_properties).get("criterion")
    if criterion is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance_results[criterion] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance_results, key=lambda n: int(n.split(".")[0])):
        outcome = _acceptance_results[name]
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{mark}] {name}")
