import sys
from pathlib import Path

import numpy as np
import pytest

from fpqual import synth
from fpqual.imagecore import GrayImage

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def whorl():
    return synth.whorl_fixture()


@pytest.fixture(scope="session")
def grating8():
    return synth.generate_grating(256, 256, np.deg2rad(30), 8)


def white_noise(seed, size=256) -> GrayImage:
    return GrayImage(synth.rng(seed).integers(0, 256, (size, size)).astype(np.uint8))


def binary_grating(size=256, period=8) -> GrayImage:
    """Horizontal 0/255 square wave with 50% duty."""
    rows = np.where(np.arange(size) % period < period // 2, 0, 255).astype(np.uint8)
    return GrayImage(np.repeat(rows[:, None], size, axis=1))


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
