ACCEPTANCE = {}     # criterion number -> (passed, summary lines)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, lines = ACCEPTANCE[n]
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}")
        for line in lines:
            tr.write_line(f"    {line}")
