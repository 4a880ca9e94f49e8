"""Collects the acceptance criteria outcomes and prints one line per criterion."""

_criteria = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        key = props["criterion"]
        ok = report.outcome == "passed"
        detail = props.get("detail", "")
        if not ok and not detail:
            detail = str(report.longrepr).strip().splitlines()[-1][:160]
        _criteria[key] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=lambda k: int(k.split()[0])):
        ok, detail = _criteria[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}")
