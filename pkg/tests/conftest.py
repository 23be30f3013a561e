import pytest

_VERDICTS = {}


class Verdicts:
    def record(self, key: str, ok: bool, detail: str) -> bool:
        _VERDICTS[key] = (bool(ok), detail)
        return bool(ok)


@pytest.fixture(scope="session")
def verdicts():
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS):
        ok, detail = _VERDICTS[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
