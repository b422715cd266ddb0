import re

import pytest

_VERDICTS = {}


@pytest.fixture
def criterion(request):
    """Record and assert one acceptance verdict: ``criterion(ok, detail)``."""
    num = int(re.match(r"test_criterion_(\d+)", request.node.name).group(1))

    def record(ok, detail):
        line = f"criterion {num}: {'PASS' if ok else 'FAIL'} | {detail}"
        _VERDICTS[num] = line
        print(line)
        assert ok, line

    return record


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if m and report.when == "call" and report.failed and int(m.group(1)) not in _VERDICTS:
        _VERDICTS[int(m.group(1))] = f"criterion {m.group(1)}: FAIL | raised before a verdict"


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[num])
