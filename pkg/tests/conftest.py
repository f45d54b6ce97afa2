import pytest

from tracelearn.mdp import GridSpec, Zone, make_grid


@pytest.fixture
def empty_grid():
    return GridSpec(8, 8, ())


@pytest.fixture
def wall_grid():
    # 3x3 zone sitting between (0,3) and (7,3)
    return GridSpec(8, 8, (Zone(3, 2, 3, 3),))


@pytest.fixture(scope="session")
def random_grids():
    return [make_grid(8, 8, seed) for seed in range(10)]


# one line per acceptance criterion, printed after the run
CRITERIA: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    CRITERIA.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in CRITERIA:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
