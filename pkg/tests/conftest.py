import numpy as np
import pytest

from funciv.fda import TimeGrid
from funciv.simgen import ScenarioConfig, generate_dataset

# criterion number -> list of (check name, passed, detail)
_ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


class CriterionRecorder:
    def __init__(self, number: int):
        self.number = number

    def check(self, name: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE.setdefault(self.number, []).append((name, bool(ok), detail))
        return bool(ok)

    def assert_all(self):
        failed = [f"{n}: {d}" for n, ok, d in _ACCEPTANCE.get(self.number, []) if not ok]
        assert not failed, f"criterion {self.number} failed: " + "; ".join(failed)


@pytest.fixture
def criterion():
    return CriterionRecorder


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        checks = _ACCEPTANCE[number]
        ok = all(c[1] for c in checks)
        terminalreporter.write_line(
            f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} ({sum(c[1] for c in checks)}/{len(checks)} checks)"
        )
        for name, passed, detail in checks:
            terminalreporter.write_line(f"    [{'ok' if passed else 'FAIL'}] {name} {detail}")


@pytest.fixture(scope="session")
def grid100():
    return TimeGrid.uniform(100)


@pytest.fixture(scope="session")
def small_data():
    return generate_dataset(ScenarioConfig(n=300, seed=11), 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
