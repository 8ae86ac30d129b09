import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(n, title): acceptance criterion covered by this test",
    )
    config._acceptance_results = {}
    config._acceptance_notes = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    item.config._acceptance_results[n] = (title, report.passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance_results", {})
    if not results:
        return
    notes = getattr(config, "_acceptance_notes", {})
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, passed = results[n]
        status = "PASS" if passed else "FAIL"
        note = f" [{notes[n]}]" if n in notes else ""
        terminalreporter.write_line(f"criterion {n} ({title}): {status}{note}")
