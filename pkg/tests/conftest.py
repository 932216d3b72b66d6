import pytest

ACCEPTANCE = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line: ``verdict(criterion, ok, detail)``."""

    def record(criterion, ok, detail=""):
        ACCEPTANCE.append((criterion, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}")
