import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record ``criterion(number, passed, detail)`` for the end-of-run summary."""

    def record(number, passed, detail=""):
        ACCEPTANCE[number] = (bool(passed), detail)
        line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} {detail}"
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
