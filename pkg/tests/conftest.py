import pytest

_LINES = pytest.StashKey()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, {})

    def record(key, ok, detail=""):
        lines[key] = f"criterion {key}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")

    return record


def _order(key):
    return tuple(int(p) if p.isdigit() else p for p in str(key).split("."))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines, key=_order):
        terminalreporter.write_line(lines[key])
