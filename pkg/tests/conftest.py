from __future__ import annotations

from collections import defaultdict

import pytest

_RESULTS: dict[int, list[tuple[bool, str]]] = defaultdict(list)
_DETAILS: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def report(request):
    """Attach a one-line summary to the running acceptance check."""

    def note(text: str) -> None:
        _DETAILS[request.node.nodeid] = text

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    detail = _DETAILS.get(item.nodeid, item.name)
    if rep.failed and rep.longrepr is not None:
        detail += " :: " + str(rep.longrepr).strip().splitlines()[-1][:160]
    _RESULTS[marker.args[0]].append((rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        checks = _RESULTS[n]
        status = "PASS" if all(ok for ok, _ in checks) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  " + " | ".join(d for _, d in checks))
