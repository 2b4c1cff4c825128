from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mcnlm.core import Image
from mcnlm.io import read_image

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).parent / "data"
HOUSE_ENV = "MCNLM_HOUSE"


def find_house() -> Image | None:
    """The 256x256 House test image, if the user supplied one."""
    candidates = [os.environ.get(HOUSE_ENV)] + [str(DATA / f"house.{ext}") for ext in ("pgm", "raw", "png", "tif")]
    for c in candidates:
        if c and Path(c).is_file():
            if Path(c).suffix.lower() in (".pgm", ".raw"):
                return read_image(c)
            from skimage import io as skio
            arr = skio.imread(c, as_gray=True).astype(np.float64)
            return Image(arr / 255.0 if arr.max() > 1.0 else arr)
    return None


def standin_image() -> Image:
    """Cameraman from scikit-image, 2x2 block-averaged to 256x256."""
    from skimage import data
    cam = data.camera().astype(np.float64) / 255.0
    return Image(cam.reshape(256, 2, 256, 2).mean(axis=(1, 3)))


def benchmark_image() -> tuple[Image, str]:
    house = find_house()
    return (house, "house") if house is not None else (standin_image(), "cameraman-256 stand-in")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion(capsys):
    """Record one acceptance line, print it immediately, and fail the test if it did not pass."""

    def report(label: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {label}: {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
