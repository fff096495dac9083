import pytest

_VERDICTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number k")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.when == "call":
        _VERDICTS[mark.args[0]] = ("PASS" if rep.passed else "FAIL", detail)
    else:
        _VERDICTS[mark.args[0]] = ("FAIL", f"{rep.when} error")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(_VERDICTS):
        status, detail = _VERDICTS[k]
        terminalreporter.write_line(f"criterion {k}: {status}  {detail}")
