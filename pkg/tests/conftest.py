import collections

import pytest

from sprag import evaluation

CRITERIA = {
    "P1": "group-summary reproduction from the reference table",
    "P2": "Kruskal-Wallis reproduction",
    "P3": "Wilcoxon p-value reproduction",
    "P4": "win-count reproduction",
    "P5": "best-config table selection",
    "P6": "oracle equivalence (retrieval, metrics, exact tests, chi-squared)",
    "P7": "end-to-end stub pipeline vs scripted oracle",
    "P8": "live-endpoint smoke test (parse-success rate)",
}


@pytest.fixture(scope="session")
def reference_table():
    return evaluation.load_reference_table()


@pytest.fixture(scope="session")
def reference_grouping():
    return evaluation.reference_grouping()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call" and not (report.when == "setup" and report.skipped):
        return
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    store = getattr(item.config, "_acceptance_results", None)
    if store is None:
        store = collections.defaultdict(lambda: {"passed": 0, "failed": 0, "skipped": 0})
        item.config._acceptance_results = store
    if report.skipped:
        store[marker.args[0]]["skipped"] += 1
    elif report.passed:
        store[marker.args[0]]["passed"] += 1
    else:
        store[marker.args[0]]["failed"] += 1


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = getattr(config, "_acceptance_results", None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(CRITERIA):
        if crit not in store:
            continue
        counts = store[crit]
        total = counts["passed"] + counts["failed"] + counts["skipped"]
        if counts["failed"]:
            status = f"FAIL ({counts['passed']}/{total} checks passed)"
        elif counts["skipped"] == total:
            status = "SKIP (no live endpoint configured)"
        else:
            status = f"PASS ({counts['passed']}/{total} checks)"
        terminalreporter.write_line(f"{crit} {CRITERIA[crit]}: {status}")
