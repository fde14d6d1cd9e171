import pytest

_LINES: dict[str, list[tuple[bool, str]]] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one outcome for a numbered acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> None:
        _LINES.setdefault(str(number), []).append((bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES, key=int):
        parts = _LINES[key]
        ok = all(p[0] for p in parts)
        detail = "; ".join(p[1] for p in parts)
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
