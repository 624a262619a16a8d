import pytest

ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """Store a one-line acceptance verdict to echo at the end of the run."""

    def record(number, passed, detail):
        ACCEPTANCE[number] = (passed, detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"AC{number:<2} {'PASS' if passed else 'FAIL'}  {detail}")
