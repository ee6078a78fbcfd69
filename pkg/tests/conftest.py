import numpy as np
import pytest


def disk(size=64, radius=12, center=None):
    c = (size - 1) / 2 if center is None else center
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - c) ** 2 + (xx - c) ** 2 <= radius**2


def square(size=16, top=4, side=6):
    m = np.zeros((size, size), bool)
    m[top : top + side, top : top + side] = True
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
