import pytest

_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): numbered acceptance criterion this test belongs to")
    config.stash[_KEY] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    entry = item.config.stash[_KEY].setdefault(marker.args[0], {"ok": True, "notes": []})
    entry["ok"] = entry["ok"] and rep.passed
    entry["notes"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    results = terminalreporter.config.stash.get(_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        entry = results[n]
        notes = "; ".join(entry["notes"])
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if entry['ok'] else 'FAIL'}  {notes}".rstrip())


@pytest.fixture
def detail(record_property):
    """Attach a one-line measurement to the acceptance summary."""
    def note(text: str):
        record_property("detail", text)
    return note
