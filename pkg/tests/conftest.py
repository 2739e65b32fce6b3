import os
import time

from hypothesis import settings

# fixed example generation by default; HYPOTHESIS_PROFILE=explore draws fresh examples
settings.register_profile("default", derandomize=True)
settings.register_profile("explore", derandomize=False)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_criteria = {}  # nodeid -> (number, title)
_outcomes = {}  # number -> list of bools
_start = time.perf_counter()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion covered by a test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            _criteria[item.nodeid] = mark.args


def pytest_runtest_logreport(report):
    if report.nodeid not in _criteria:
        return
    number, _ = _criteria[report.nodeid]
    if report.when == "call" or report.failed or report.skipped:
        _outcomes.setdefault(number, []).append(report.passed and report.when == "call")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    titles = {n: t for n, t in _criteria.values()}
    for number in sorted(titles):
        results = _outcomes.get(number)
        status = "NOT RUN" if not results else ("PASS" if all(results) else "FAIL")
        tr.write_line(f"[{status}] criterion {number}: {titles[number]}")
    tr.write_line(f"suite wall time {time.perf_counter() - _start:.1f} s (target < 60 s)")
