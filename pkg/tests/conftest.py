"""Shared pytest plumbing.

The only job of this file is the acceptance summary: every test in
``test_acceptance.py`` is named ``test_<key>_*`` where ``<key>`` is one
of the criterion keys below, and after a run the terminal summary shows
one PASS/FAIL/SKIP line per criterion that was exercised.
"""

CRITERIA = (
    ("c1", "quality gate reproduces all 12 fixture verdicts (fake runner, under 5s)"),
    ("c2", "color-invariance checked exhaustively over every 2x2 grid on 3 colors (under 10s)"),
    ("c3", "complexity metrics agree with the independent oracle on the frozen corpus"),
    ("c4", "retrieval ranking matches the brute-force oracle over 1,000 random indexes"),
    ("c5", "replayed synthesis reproduces golden task files byte-for-byte with exact rates"),
    ("c6", "task files round-trip parse/serialize; violations report exact JSON paths"),
    ("c7", "rate strings format exactly (94.12%, 66.67%, em dash)"),
    ("c8", "dataset statistics match the published corpus (set ARCFORGE_DATASET_DIR)"),
    ("s1", "external runner conforms to the stdio protocol (needs arcforge-runner installed)"),
    ("s2", "external runner and in-process fake agree on gate verdicts end to end"),
)

_KEYS = {key for key, _ in CRITERIA}
_outcomes: dict[str, set[str]] = {}


def _criterion_key(nodeid: str) -> str | None:
    if "test_acceptance" not in nodeid:
        return None
    name = nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_"):
        return None
    key = name[len("test_") :].split("_", 1)[0].split("[", 1)[0]
    return key if key in _KEYS else None


def pytest_runtest_logreport(report):
    key = _criterion_key(report.nodeid)
    if key is None:
        return
    bucket = _outcomes.setdefault(key, set())
    if report.failed:
        bucket.add("failed")
    elif report.skipped:
        bucket.add("skipped")
    elif report.when == "call" and report.passed:
        bucket.add("passed")


def pytest_terminal_summary(terminalreporter):
    exercised = {key: states for key, states in _outcomes.items() if states}
    if not exercised:
        return
    terminalreporter.section("acceptance criteria")
    for key, title in CRITERIA:
        states = exercised.get(key)
        if not states:
            continue
        if "failed" in states:
            word = "FAIL"
        elif "passed" in states:
            word = "PASS"
        else:
            word = "SKIP"
        terminalreporter.write_line(f"{word}  {key}: {title}")
    _outcomes.clear()
