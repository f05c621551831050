import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion_report():
    """Collect one-line acceptance verdicts; printed in the terminal summary."""

    def record(line: str) -> None:
        _ACCEPTANCE_LINES.append(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
