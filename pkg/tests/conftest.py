import pytest

ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


class Recorder:
    def __call__(self, criterion: int, ok: bool, detail: str):
        ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
        return ok


@pytest.fixture
def acceptance():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[k]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {k}: {status} - {detail}")
