"""Collects one PASS/FAIL line per acceptance criterion.

Tests in ``test_acceptance.py`` carry ``@pytest.mark.criterion(n, title)``
and report through the ``verdict`` fixture. The lines are echoed as they
happen and repeated in the terminal summary, so they show up with or
without ``-s``. A criterion test that crashes before reaching its verdict
is reported as FAIL with the exception text.
"""

import pytest

_LINES = pytest.StashKey[dict]()
_DONE = pytest.StashKey[bool]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.stash[_LINES] = {}


def _line(number, title, ok, detail):
    return f"{'PASS' if ok else 'FAIL'}  [{number:>2}] {title}: {detail}"


@pytest.fixture
def verdict(request, capsys):
    mark = request.node.get_closest_marker("criterion")
    number, title = mark.args

    def record(ok: bool, detail: str) -> None:
        line = _line(number, title, ok, detail)
        request.config.stash[_LINES][number] = line
        request.node.stash[_DONE] = True
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" or item.stash.get(_DONE, False):
        return
    if report.failed:
        number, title = mark.args
        msg = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
        item.config.stash[_LINES][number] = _line(number, title, False, f"crashed: {msg[:120]}")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_LINES]
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
