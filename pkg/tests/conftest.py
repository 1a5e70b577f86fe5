"""Collects acceptance verdicts so they print once at the end of the run."""

_LINES: list[str] = []


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    verdict = "PASS" if report.passed else "FAIL"
    detail = props.get("detail", "")
    _LINES.append(f"{verdict} criterion {props['criterion']}" + (f" [{detail}]" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)
