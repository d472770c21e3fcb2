import pytest

CRITERIA = {}


@pytest.fixture
def record_criterion():
    """Store one verdict line per acceptance criterion for the terminal summary."""

    def record(number, title, passed, detail):
        CRITERIA[number] = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        print(CRITERIA[number])

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[number])
