def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import SCORECARD
    except ImportError:
        return
    if SCORECARD:
        terminalreporter.section("acceptance scorecard")
        for line in SCORECARD:
            terminalreporter.write_line(line)
