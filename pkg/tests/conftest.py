import pytest

_RESULTS: list[str] = []


class Criterion:
    """Records one PASS/FAIL/SKIP line per acceptance criterion."""

    def record(self, number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        _RESULTS.append(line)
        print(line)
        assert ok, line

    def skip(self, number: int, title: str, reason: str) -> None:
        line = f"criterion {number:>2} SKIP  {title}  ({reason})"
        _RESULTS.append(line)
        print(line)
        pytest.skip(reason)


@pytest.fixture
def criterion() -> Criterion:
    return Criterion()


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_RESULTS):
            terminalreporter.write_line(line)
