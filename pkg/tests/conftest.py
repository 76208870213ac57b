import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = ""
        if rep.failed:
            detail = str(rep.longrepr.reprcrash.message) if hasattr(rep.longrepr, "reprcrash") else ""
            detail = detail.splitlines()[0] if detail else ""
        _CRITERIA[n] = (title, rep.outcome, rep.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, outcome, dur, detail = _CRITERIA[n]
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {n:2d} {status}  {title}  ({dur:.1f}s)"
        if detail:
            line += f"  -- {detail}"
        tr.write_line(line)
