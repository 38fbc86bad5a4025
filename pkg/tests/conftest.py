import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import helpers  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not helpers.ACCEPTANCE_LOG:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(helpers.ACCEPTANCE_LOG, key=lambda t: t[0]):
        word = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        terminalreporter.write_line(f"[{word}] criterion {num}: {title} ({detail})")
