import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

# one line per acceptance criterion, filled in by test_acceptance.py
VERDICTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[key])
