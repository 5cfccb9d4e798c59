"""Shared pytest hooks.

Acceptance tests call :func:`record` for every sub-check; the terminal
summary then prints one PASS/FAIL line per criterion.
"""

from collections import defaultdict

ACCEPTANCE = defaultdict(list)


def record(criterion: int, label: str, passed: bool, detail: str = "") -> bool:
    ACCEPTANCE[criterion].append((label, bool(passed), detail))
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[criterion]
        ok = all(passed for _, passed, _ in checks)
        failed = [label for label, passed, _ in checks if not passed]
        note = f"{len(checks)} checks" if ok else "failed: " + "; ".join(failed)
        tr.write_line(f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'} ({note})")
    tr.write_line("")
    for criterion in sorted(ACCEPTANCE):
        for label, passed, detail in ACCEPTANCE[criterion]:
            tr.write_line(f"  [{criterion:2d}] {'ok  ' if passed else 'FAIL'} {label}: {detail}")
