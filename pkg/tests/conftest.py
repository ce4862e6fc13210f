"""Shared pytest plumbing.

Acceptance tests append one summary line per criterion to
ACCEPTANCE_LINES; the terminal-summary hook replays them after the run so
the pass/fail verdict for every criterion is visible even when pytest
captures test output.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
