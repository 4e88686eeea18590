import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if call.when == "setup" and call.excinfo is not None:
        skipped = call.excinfo.errisinstance(pytest.skip.Exception)
        _VERDICTS[number] = (title, "SKIP" if skipped else "FAIL", "")
    elif call.when == "call":
        detail = dict(item.user_properties).get("detail", "")
        if call.excinfo is None:
            status = "PASS"
        elif call.excinfo.errisinstance(pytest.skip.Exception):
            status = "SKIP"
        else:
            status = "FAIL"
        _VERDICTS[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, status, detail = _VERDICTS[number]
        line = f"[{status}] criterion {number}: {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
