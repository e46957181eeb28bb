from pathlib import Path

import numpy as np
import pytest

from spreadsurf.function_space import HbSurface, SurfaceGrid

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def grid():
    return SurfaceGrid(5.0, 60, 10, 0.5, 1.0)


@pytest.fixture
def small_grid():
    return SurfaceGrid(2.0, 24, 5, 0.5, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def linear_short_surface(grid, a=0.02, b=0.03):
    """h(xi, eta) = a + b (1 - eta): flat in xi, linear spread in eta."""
    return HbSurface.from_function(grid, lambda xi, eta: a + b * (1 - eta) + 0 * xi)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        print(ACCEPTANCE_LINES[-1])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
