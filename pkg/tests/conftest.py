from __future__ import annotations

import pytest

ACCEPTANCE: dict[int | str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(n, ok: bool, detail: str, merge: bool = False) -> bool:
        """Record a criterion; ``merge`` folds a parametrized case into earlier ones."""
        prev = ACCEPTANCE.get(n) if merge else None
        if prev is not None:
            ok, detail = prev[0] and ok, f"{prev[1]}; {detail}"
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE, key=lambda k: (isinstance(k, str), k)):
        ok, detail = ACCEPTANCE[n]
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
