import pytest

from artifact.events import SECONDS_PER_DAY, Event

DAY = 16100
T0 = DAY * SECONDS_PER_DAY


def ev(ts, host, domain, ip=None, ua="Mozilla/5.0", ref=True, source="http", day=DAY):
    """Event at ``ts`` seconds into ``day``."""
    if source == "dns":
        return Event(day * SECONDS_PER_DAY + ts, host, domain, ip, "A", None, None, None, "dns")
    return Event(day * SECONDS_PER_DAY + ts, host, domain, ip, None, ua, ref, 200, "http")


def periodic(host, domain, start, period, n, ip=None, ua=None, ref=False, day=DAY):
    return [ev(start + i * period, host, domain, ip, ua, ref, day=day) for i in range(n)]


@pytest.fixture
def make_event():
    return ev


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(number, title, passed, detail):
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} | {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
