import pytest

ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    if report.when == "setup" and not report.failed:
        return
    status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
    ACCEPTANCE[item.nodeid] = (number, title, status, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, duration in sorted(ACCEPTANCE.values(), key=lambda r: (r[0], r[1])):
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title} ({duration:.2f}s)")
