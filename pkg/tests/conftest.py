"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

import pytest

_VERDICTS = {}


class CriterionLog:
    def __init__(self, key):
        self.key = key

    def record(self, passed, detail):
        _VERDICTS[self.key] = (bool(passed), detail)
        return passed


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    return CriterionLog(marker.args[0] if marker else request.node.name)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key): acceptance criterion identifier")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS, key=lambda k: (int("".join(c for c in k if c.isdigit()) or 0), k)):
        passed, detail = _VERDICTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'} | {detail}")
