import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]

# criterion id -> (passed, detail); filled by tests in test_acceptance.py
ACCEPTANCE_RESULTS: dict = {}


@pytest.fixture
def record_criterion():
    def record(cid: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE_RESULTS[cid] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_RESULTS, key=lambda c: (int("".join(ch for ch in c if ch.isdigit())), c)):
        passed, detail = ACCEPTANCE_RESULTS[cid]
        terminalreporter.write_line(f"criterion {cid:<4} {'PASS' if passed else 'FAIL'}  {detail}")
