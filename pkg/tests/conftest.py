import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance verdict line; all lines are printed at the end of the run."""

    def _report(label: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE_LINES.append(f"{label} {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
