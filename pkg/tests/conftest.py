import pytest

ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def verdicts(request):
    """Collects one (criterion, passed, detail) line per acceptance criterion."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(lines, key=lambda x: int(x[0].split()[1])):
        terminalreporter.write_line(f"{name}: {'PASS' if passed else 'FAIL'}  {detail}")
