import pytest

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _outcomes.setdefault(number, {"title": title, "passed": True, "failed": []})
    if rep.failed or (rep.when == "setup" and rep.skipped):
        entry["passed"] = False
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes, key=lambda n: int(str(n).split()[0])):
        e = _outcomes[number]
        status = "PASS" if e["passed"] else "FAIL"
        extra = "" if e["passed"] else f"  (failing: {', '.join(e['failed'])})"
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {e['title']}{extra}")
