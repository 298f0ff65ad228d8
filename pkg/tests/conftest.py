from pathlib import Path

import numpy as np
import pytest

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "detail": []})
    if rep.failed:
        entry["ok"] = False
        entry["detail"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] else "FAIL"
        extra = f"  (failed: {', '.join(entry['detail'])})" if entry["detail"] else ""
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {entry['title']}{extra}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def int_mats():
    def make(m, n, k, seed=0):
        r = np.random.default_rng(seed)
        a = r.integers(-8, 9, size=(m, k)).astype(np.float64)
        b = r.integers(-8, 9, size=(k, n)).astype(np.float64)
        return a, b

    return make
