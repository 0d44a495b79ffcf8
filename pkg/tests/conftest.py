import pytest

_results: dict[int, tuple[str, str, float]] = {}
_setup_time: dict[str, float] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and short title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "setup":
        _setup_time[item.nodeid] = rep.duration
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        total = rep.duration + (_setup_time.get(item.nodeid, 0.0) if rep.when == "call" else 0.0)
        _results[n] = (title, "PASS" if rep.passed else "FAIL", total)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        title, status, seconds = _results[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title} ({seconds:.2f} s)")
