import pytest

_LINES: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion with a PASS/FAIL line")


@pytest.fixture
def note(request):
    """Attach a short measurement summary to the criterion line of this test."""
    def add(text):
        request.node.criterion_detail = text
    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    status = "PASS" if rep.passed else "FAIL"
    detail = getattr(item, "criterion_detail", "")
    line = f"criterion {number:>2}  {status}  {title}  [{rep.duration:.1f}s]"
    _LINES[number] = line + (f"  {detail}" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_LINES):
        terminalreporter.write_line(_LINES[number])
