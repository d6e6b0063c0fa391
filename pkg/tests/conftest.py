import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sparsysid.model import ModelSpec

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def linear_spec():
    return ModelSpec(3, 2, 2, (), (), feedthrough=True)


@pytest.fixture
def rnn_spec():
    return ModelSpec(3, 2, 2, (8,), (6,), "swish", feedthrough=True)


# -- acceptance summary ----------------------------------------------------------
# Tests marked ``criterion(n, title)`` are collected into one PASS/FAIL line each,
# printed at the end of the run (also without ``-s``).

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        _CRITERIA[mark.args[0]] = (mark.args[1], rep.outcome, rep.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, outcome, dur, detail = _CRITERIA[num]
        status = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        line = f"criterion {num:2d} {status}  {title}  ({dur:.1f} s)"
        if detail:
            line += f"  {detail}"
        terminalreporter.write_line(line)
