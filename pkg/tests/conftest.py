from pathlib import Path

import numpy as np
import pytest

from adjflow import config as C
from adjflow.primal import TimeGrid
from adjflow.tableau import make_tableau

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def report():
    """Record one acceptance line: ``report(label, passed, detail)``."""
    def _add(label: str, passed: bool, detail: str = ""):
        _ACCEPTANCE.append((label, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'} {label} {detail}")
        return passed
    return _add


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}  {detail}")


@pytest.fixture(scope="session")
def piston_cfg():
    return C.load_config(CONFIGS / "piston.yaml")


@pytest.fixture(scope="session")
def piston(piston_cfg):
    """(system, tableau, grid, qois, mu0) for the shipped piston problem."""
    tab, grid = make_tableau("dirk3"), TimeGrid.uniform(1.0, 20)
    system = C.build_system(piston_cfg, tab, grid)
    qois = C.build_qois(piston_cfg, system)
    return system, tab, grid, qois, np.array(piston_cfg.parameters.initial)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
