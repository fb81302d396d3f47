def pytest_terminal_summary(terminalreporter):
    from tests.test_acceptance import REPORT

    if not REPORT:
        return
    terminalreporter.section("acceptance")
    for key in sorted(REPORT):
        terminalreporter.write_line(REPORT[key])
