import numpy as np
import pytest

from terracarbon.trees import TreeParams, fit_tree

_CRITERIA: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    number = getattr(report, "criterion", None)
    if number is not None:
        _CRITERIA.setdefault(number, []).append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok = all(o == "passed" for o in _CRITERIA[number])
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}")


@pytest.fixture(scope="session", autouse=True)
def warm_jit():
    """Compile the tree kernels once so timed tests measure fitting, not compilation."""
    X = np.random.default_rng(0).random((20, 3))
    fit_tree(X, X[:, 0], TreeParams(mtry=2))
    fit_tree(X, (X[:, 0], np.ones(20)), TreeParams(objective="xgb_gain", reg_lambda=1.0)).predict(X)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
