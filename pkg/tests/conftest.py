"""Shared pytest hooks.

Tests marked ``@pytest.mark.criterion(n, title)`` are exit criteria; after the
run one PASS/FAIL line per criterion is printed, with any values the test
recorded through ``record_property``.
"""
import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    status, _, props = _results.get(number, ("PASS", title, []))
    if rep.failed:
        status = "FAIL"
    elif rep.skipped and status == "PASS":
        status = "SKIP"
    if rep.when == "call":
        props = props + [kv for kv in item.user_properties if kv not in props]
    _results[number] = (status, title, props)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_results):
        status, title, props = _results[number]
        detail = ", ".join(f"{k}={_fmt(v)}" for k, v in props)
        tr.write_line(f"{status} criterion {number}: {title}" + (f" [{detail}]" if detail else ""))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)
