import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    def report(number, name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
