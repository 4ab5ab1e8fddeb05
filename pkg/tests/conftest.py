import pytest

_ACCEPTANCE: list[tuple[str, bool, str]] = []


class AcceptanceReport:
    def record(self, name: str, passed: bool, detail: str = ""):
        _ACCEPTANCE.append((name, passed, detail))
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        print(line)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceReport()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


SEEDS = tuple(range(100, 110))


class Sweeps(dict):
    """Sweeps over SEEDS keyed by (preset, protocol, agents), computed once."""

    def __missing__(self, key):
        from fedrd.harness import preset, sweep

        name, protocol, agents = key
        self[key] = sweep(preset(name, protocol=protocol, seeds=SEEDS), [agents], workers=1)
        return self[key]


class _Fig3Runs:
    def __init__(self, sweeps):
        self._sweeps = sweeps

    def __getitem__(self, protocol):
        return self._sweeps["fig3", protocol, 2]


@pytest.fixture(scope="session")
def sweeps():
    return Sweeps()


@pytest.fixture(scope="session")
def fig3_runs(sweeps):
    """Two-agent fig3 sweeps, one per protocol."""
    return _Fig3Runs(sweeps)
