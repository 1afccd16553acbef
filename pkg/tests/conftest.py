import pytest

_KEY = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record one pass/fail line per acceptance criterion; assert separately."""
    lines = request.config.stash.setdefault(_KEY, {})

    def record(criterion: int, ok: bool, detail: str) -> bool:
        lines[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_KEY, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
