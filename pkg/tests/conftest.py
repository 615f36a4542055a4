import os
import sys
import time

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mock_explorer import MockExplorer  # noqa: E402

SUITE_BUDGET_S = 120.0

# criterion number -> {"title", "ok", "notes"}; filled by the makereport hook
_criteria: dict[int, dict] = {}
_t_start = [0.0]


@pytest.fixture(autouse=True)
def _isolated_env(tmp_path, monkeypatch):
    monkeypatch.setenv("DAOGINI_CACHE_DIR", str(tmp_path / "cache"))
    for var in ("DAOGINI_API_KEY", "DAOGINI_DROP_CONTRACTS", "DAOGINI_SE",
                "DAOGINI_TRANSFORM_DEP", "DAOGINI_GINI_FLOOR", "DAOGINI_EXPLORER_URL"):
        monkeypatch.delenv(var, raising=False)


@pytest.fixture
def explorer():
    mock = MockExplorer().start()
    yield mock
    mock.stop()


@pytest.fixture
def measured(request):
    """Attach a measurement note to the acceptance line of this test."""
    def note(text):
        request.node.user_properties.append(("measured", text))
    return note


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_sessionstart(session):
    _t_start[0] = time.perf_counter()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "notes": []})
    if rep.failed or rep.skipped:
        entry["ok"] = False
        entry["notes"].append(f"{item.name} {rep.outcome}")
    if rep.when == "call":
        entry["notes"] += [v for k, v in item.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criteria:
        return
    elapsed = time.perf_counter() - _t_start[0]
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        line = f"{'PASS' if entry['ok'] else 'FAIL'}  criterion {number:2d}: {entry['title']}"
        if number == 11:
            suite_ok = elapsed < SUITE_BUDGET_S
            entry["notes"].append(f"this pytest run {elapsed:.1f} s (budget {SUITE_BUDGET_S:.0f} s)")
            if not suite_ok:
                line = line.replace("PASS", "FAIL", 1)
        if entry["notes"]:
            line += "  [" + "; ".join(entry["notes"]) + "]"
        tr.write_line(line)


def pytest_sessionfinish(session, exitstatus):
    entry = _criteria.get(11)
    if entry is not None and time.perf_counter() - _t_start[0] >= SUITE_BUDGET_S:
        session.exitstatus = 1
