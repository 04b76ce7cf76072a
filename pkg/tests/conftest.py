import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    if report.when == "call" or report.outcome != "passed":
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        detail = props.get("detail", "")
        if report.outcome != "passed" and report.longrepr is not None:
            if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
                detail = report.longrepr[2]
            else:
                detail = str(getattr(report.longrepr, "reprcrash", None) and
                             report.longrepr.reprcrash.message or report.longrepr).splitlines()[0]
        # parametrized criteria report their worst case
        rank = {"FAIL": 2, "PASS": 1, "SKIP": 0}
        if key not in _CRITERIA or rank[status] >= rank[_CRITERIA[key][0]]:
            _CRITERIA[key] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: int(k)):
        status, detail = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key:>2}: {status}  {detail}")
