import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = {}


@pytest.fixture
def criterion():
    """``record(n, part, ok, detail)`` stores one sub-result for acceptance criterion ``n``."""

    def record(n, part, ok, detail=""):
        _CRITERIA.setdefault(n, []).append((part, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance")
    for n in sorted(_CRITERIA):
        parts = _CRITERIA[n]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{p}: {'ok' if ok else 'FAIL'} {d}".strip() for p, ok, d in parts)
        terminalreporter.write_line(f"ACCEPTANCE {n} {verdict} {detail}")
