"""Shared pytest hooks: summarize acceptance criteria as one line each."""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes = {}
    for status in ("passed", "failed", "error", "xfailed", "xpassed", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" in nodeid and "::" in nodeid:
                outcomes[nodeid.split("::")[-1]] = status.upper()
    if outcomes:
        terminalreporter.section("acceptance criteria")
        for name in sorted(outcomes):
            terminalreporter.write_line(f"{name}: {outcomes[name]}")
