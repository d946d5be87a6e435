import pytest

from stabtest.core import FiniteDistribution, Space, builtin_learner_zoo


@pytest.fixture
def space22():
    return Space(2, 2)


@pytest.fixture
def uniform22(space22):
    return FiniteDistribution.uniform(space22)


@pytest.fixture
def zoo(space22):
    return builtin_learner_zoo(space22)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion and echo it."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
