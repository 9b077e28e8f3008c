import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, name): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not report.failed:
        return
    number, name = marker.args
    entry = _results.setdefault(number, {"name": name, "passed": True, "notes": []})
    entry["passed"] &= report.passed
    entry["notes"].extend(v for k, v in item.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        r = _results[number]
        status = "PASS" if r["passed"] else "FAIL"
        notes = "; ".join(r["notes"])
        terminalreporter.write_line(f"{status} {number}. {r['name']}" + (f" ({notes})" if notes else ""))
