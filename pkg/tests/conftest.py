import pytest

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "training: end-to-end training runs (minutes of CPU time)")
    config.stash[_LINES_KEY] = []


@pytest.fixture
def report(request):
    """Record one pass/fail line for the terminal summary and print it."""
    lines = request.config.stash[_LINES_KEY]

    def emit(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
