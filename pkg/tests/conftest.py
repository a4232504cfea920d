"""Shared fixtures and the acceptance-criteria reporting hook."""

CRITERION_RESULTS = []


def record_criterion(name: str, passed: bool, detail: str):
    CRITERION_RESULTS.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not CRITERION_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in CRITERION_RESULTS:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {name}: {detail}")
