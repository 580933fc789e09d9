def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One line per acceptance criterion at the end of the run."""
    rows = []
    for outcome in ("passed", "failed", "skipped"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            if outcome == "skipped" or getattr(report, "when", "call") == "call":
                rows.append((nodeid, outcome.upper()))
    if rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for nodeid, outcome in sorted(rows):
            terminalreporter.write_line(f"{outcome:<7} {nodeid.split('::', 1)[1]}")
