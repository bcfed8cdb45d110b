import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")
    config.criteria_lines = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    details = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    line = f"{'PASS' if rep.passed else 'FAIL'} criterion {number:>2}: {title}"
    item.config.criteria_lines[number] = line + (f" ({details})" if details else "")
    print("\n" + item.config.criteria_lines[number])


def pytest_terminal_summary(terminalreporter, config):
    if config.criteria_lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(config.criteria_lines):
            terminalreporter.write_line(config.criteria_lines[number])
