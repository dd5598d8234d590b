import pytest

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.fixture
def note(request):
    """Attach a one-line measurement summary to the running criterion."""

    def _note(msg: str) -> None:
        request.node.criterion_detail = msg
        print(msg)

    return _note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _CRITERIA[marker.args[0]] = (marker.args[1], rep.outcome, getattr(item, "criterion_detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        title, outcome, detail = _CRITERIA[k]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {k} {verdict}: {title}" + (f" | {detail}" if detail else ""))
