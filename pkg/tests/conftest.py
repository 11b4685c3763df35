import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# (number, title, passed, detail) filled in by test_acceptance
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} [{num}] {title}: {detail}")
