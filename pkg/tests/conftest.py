"""Shared test configuration: acceptance-criterion result reporting."""

criteria_results: list[str] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    """Collect a one-line verdict shown in the terminal summary."""
    status = "PASS" if passed else "FAIL"
    line = f"[{status}] {name}"
    if detail:
        line += f" -- {detail}"
    criteria_results.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if criteria_results:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in criteria_results:
            terminalreporter.write_line(line)
