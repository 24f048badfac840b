"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import re

CRITERIA = {
    1: "adjointness",
    2: "dense-oracle equivalence",
    3: "gradient suite",
    4: "consensus bit-exactness",
    5: "sparse-view artifact trend",
    6: "filter learning",
    7: "end-to-end training run",
    8: "metrics oracle",
    9: "determinism",
    10: "WLS+TV sanity",
}

_outcomes: dict[int, list[bool]] = {}
_values: dict[int, list[tuple[str, object]]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_a(\d+)_", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        _outcomes.setdefault(n, []).append(report.outcome == "passed")
    if report.when == "call":
        _values.setdefault(n, []).extend(report.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n not in _outcomes:
            status = "NOT RUN"
        else:
            status = "PASS" if all(_outcomes[n]) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {name}: {status}")
        for key, val in _values.get(n, []):
            shown = f"{val:.6g}" if isinstance(val, float) else val
            terminalreporter.write_line(f"    {key} = {shown}")
