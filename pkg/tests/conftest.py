import sys
from pathlib import Path

# oracle and helper modules live next to the tests
sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[str, tuple[str, bool]] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        prev_ok = _criteria.get(key, (None, True))[1]
        _criteria[key] = (props.get("title", ""), prev_ok and not failed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=int):
        title, ok = _criteria[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {key}: {title}")
