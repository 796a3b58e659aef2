import pytest

_CRITERIA = {}


class CriterionLog:
    """Records one pass/fail line per acceptance criterion."""

    def __call__(self, key: str, ok: bool, detail: str) -> bool:
        prev = _CRITERIA.get(key)
        ok = bool(ok) and (prev is None or prev[0])
        detail = detail if prev is None else f"{prev[1]}; {detail}"
        _CRITERIA[key] = (ok, detail)
        print(f"criterion {key}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok


@pytest.fixture(scope="session")
def criterion():
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, detail = _CRITERIA[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}")
