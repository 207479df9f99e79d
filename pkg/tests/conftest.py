import pytest

_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record a measured value for the acceptance summary: criterion(n, text)."""
    def record(n, text):
        _CRITERIA[n] = [request.node.nodeid, text, None]
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        for entry in _CRITERIA.values():
            if entry[0] == item.nodeid:
                entry[2] = rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        _, text, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")
