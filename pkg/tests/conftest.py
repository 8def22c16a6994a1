import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion check")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    _ACCEPTANCE[props["criterion"]] = (props.get("title", ""), report.outcome, props.get("detail", ""),
                                       report.duration)


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is not None and not any(k == "criterion" for k, _ in item.user_properties):
        number, title = marker.args
        item.user_properties.append(("criterion", number))
        item.user_properties.append(("title", title))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, outcome, detail, duration = _ACCEPTANCE[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {number} [{status}] {title} ({duration:.1f}s)"
        if detail:
            line += f": {detail}"
        terminalreporter.write_line(line)


@pytest.fixture
def detail(record_property):
    """Attach a one-line result summary to an acceptance test."""

    def _set(text):
        record_property("detail", text)

    return _set


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
