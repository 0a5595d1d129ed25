import numpy as np
import pytest

from chorin.grid import DomainSpec, build_dirichlet_grid, build_torus_grid

_GRIDS = {}


def cached_grid(kind, size):
    key = (kind, size)
    if key not in _GRIDS:
        if kind == "ball":
            _GRIDS[key] = build_dirichlet_grid(DomainSpec.ball(), size)
        else:
            _GRIDS[key] = build_torus_grid(size)
    return _GRIDS[key]


@pytest.fixture(scope="session")
def ball12():
    return cached_grid("ball", 0.12)


@pytest.fixture(scope="session")
def ball08():
    return cached_grid("ball", 0.08)


@pytest.fixture(scope="session")
def torus8():
    return cached_grid("torus", 8)


@pytest.fixture(scope="session")
def torus9():
    return cached_grid("torus", 9)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = report.nodeid.split("::")[-1]
    if "test_acceptance.py" in report.nodeid and name.startswith("test_criterion_"):
        _CRITERIA[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        num = int(name.split("_")[2])
        label = " ".join(name.split("_")[3:])
        verdict = "PASS" if _CRITERIA[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d} {verdict}  {label}")
