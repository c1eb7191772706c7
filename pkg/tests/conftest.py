import pytest

_verdicts = []


class Verdicts:
    """Collects one summary line per acceptance criterion."""

    def record(self, number: int, name: str, passed, detail: str) -> None:
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        _verdicts.append((number, f"[{status}] {number}. {name}: {detail}"))


@pytest.fixture(scope="session")
def verdicts():
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_verdicts):
        terminalreporter.write_line(line)
