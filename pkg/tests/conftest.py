import re

import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion.

    Usage: ``criterion(ok, "detail")``; the criterion number comes from the
    test name (``test_criterion_<n>_...``). A test that errors before
    recording is reported as failed.
    """
    num = int(re.match(r"test_criterion_(\d+)", request.node.name).group(1))

    def record(ok: bool, detail: str):
        line = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES[num] = line
        print(line)
        return ok

    yield record
    _LINES.setdefault(num, f"criterion {num}: FAIL  (errored before a result was recorded)")


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for num in sorted(_LINES):
            terminalreporter.write_line(_LINES[num])
