import pytest

from resloss.bundle import scenario_from_config, write_synthetic_bundle


@pytest.fixture(scope="session")
def bundle_b(tmp_path_factory):
    """wafer-like-B chip reduced to one regular and the overcoupled 8.5 GHz resonator."""
    sc = scenario_from_config({"preset": "wafer-like-B", "resonators": [0, 3]}, seed=11)
    return write_synthetic_bundle(sc, tmp_path_factory.mktemp("bundle_b")), sc


# --- acceptance summary ------------------------------------------------------------

_ACCEPTANCE: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    ac_id, title = mark.args
    entry = _ACCEPTANCE.setdefault(ac_id, {"title": title, "ok": True, "ran": False, "secs": 0.0})
    if rep.when == "call":
        entry["ran"] = True
        entry["secs"] += rep.duration
    if rep.failed or (rep.when == "call" and rep.skipped):
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for ac_id in sorted(_ACCEPTANCE, key=lambda k: int(k[2:])):
        e = _ACCEPTANCE[ac_id]
        status = "PASS" if e["ok"] and e["ran"] else ("NOT RUN" if e["ok"] else "FAIL")
        terminalreporter.write_line(f"{ac_id} {status:<7} {e['title']} ({e['secs']:.1f} s)")
