import numpy as np
import pytest

_criteria = {}
_outcomes = {}


def random_spd(rng, p, cond=None):
    """Random symmetric positive definite matrix, optionally with a given condition number."""
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    if cond is None:
        ev = rng.uniform(0.2, 3.0, size=p)
    else:
        ev = np.logspace(0, np.log10(cond), p)
    S = (Q * ev) @ Q.T
    return 0.5 * (S + S.T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _criteria[item.nodeid] = mark.args[0]


def pytest_runtest_logreport(report):
    if report.nodeid not in _criteria:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _outcomes.get(report.nodeid, "passed")
        _outcomes[report.nodeid] = prev if prev != "passed" else report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, name in _criteria.items():
        if nodeid not in _outcomes:
            continue
        status = "PASS" if _outcomes[nodeid] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")
