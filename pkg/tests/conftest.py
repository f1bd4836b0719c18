import pytest

# (number, title, passed) for every acceptance criterion that ran
ACCEPTANCE: list[tuple[int, str, bool]] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the test body must finish for it to count as a pass."""
    number, title = request.node.get_closest_marker("criterion").args
    outcome = {"passed": False}
    yield outcome
    ACCEPTANCE.append((number, title, outcome["passed"]))
    print(f"criterion {number:>2} {'PASS' if outcome['passed'] else 'FAIL'}  {title}")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}")
