import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, title): acceptance criterion")
    config.stash[_LINES] = []


@pytest.fixture
def detail(request):
    """List of strings shown next to the criterion's pass/fail line."""
    notes = []
    request.node.criterion_detail = notes
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or (rep.when == "setup" and not rep.passed)):
        return
    label, title = mark.args
    status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
    notes = "; ".join(getattr(item, "criterion_detail", []))
    line = f"{label:<10}{status:<6}{title}" + (f"  [{notes}]" if notes else "")
    item.config.stash[_LINES].append(line)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
