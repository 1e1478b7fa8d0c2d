"""Shared pytest plumbing.

The acceptance tests append one PASS/FAIL line each to ``ACCEPTANCE_LINES``;
printing them from the terminal-summary hook keeps them visible even though
pytest captures ordinary stdout.
"""

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance summary")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
