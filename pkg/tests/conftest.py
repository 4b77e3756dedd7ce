import pytest

_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion_log(request):
    """Collects acceptance PASS/FAIL lines for the end-of-run summary."""
    return request.config.stash.setdefault(_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
