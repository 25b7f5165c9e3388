import re

import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Recorder for acceptance lines; the criterion number comes from the
    test name (``test_criterion_07_...``).  A test that errors before
    recording still gets a FAIL line."""
    number = int(re.search(r"criterion_(\d+)", request.node.name).group(1))

    def record(status, detail):
        ACCEPTANCE[number] = (status, detail)

    yield record
    if number not in ACCEPTANCE:
        ACCEPTANCE[number] = ("FAIL", "errored before a result was recorded")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
