import pytest

_LINES: list[str] = []


class Recorder:
    """Collects one verdict line per acceptance criterion."""

    def __init__(self, capsys):
        self._capsys = capsys

    def __call__(self, number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES.append(line)
        with self._capsys.disabled():
            print("\n" + line)
        return ok


@pytest.fixture
def criterion(capsys):
    return Recorder(capsys)


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
