def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance check, whatever verbosity ran."""
    rows = []
    for status in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = str(getattr(rep, "nodeid", ""))
            if "test_acceptance.py" not in nodeid:
                continue
            if status != "skipped" and getattr(rep, "when", "call") != "call":
                continue
            rows.append((nodeid.split("::")[-1], status.upper()))
    if not rows:
        return
    terminalreporter.section("acceptance gate")
    for name, status in sorted(rows):
        terminalreporter.write_line(f"{status:7s} {name}")
