import pytest

_outcomes: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep.criterion = marker.args


def pytest_runtest_logreport(report):
    marked = getattr(report, "criterion", None)
    if marked is None:
        return
    n, title = marked
    entry = _outcomes.setdefault(n, {"title": title, "failed": [], "passed": 0, "notes": []})
    if report.failed:
        entry["failed"].append(report.nodeid.split("::")[-1])
    elif report.when == "call" and report.passed:
        entry["passed"] += 1
    if report.when == "call":
        entry["notes"] += [str(v) for k, v in report.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_outcomes):
        e = _outcomes[n]
        status = "FAIL" if e["failed"] or not e["passed"] else "PASS"
        line = f"criterion {n:>2} {status}  {e['title']}"
        if e["notes"]:
            line += "  [" + "; ".join(e["notes"]) + "]"
        if e["failed"]:
            line += "  failing: " + ", ".join(e["failed"])
        tr.write_line(line)
