import numpy as np
import pytest


def synthetic_scene(size: int = 128) -> np.ndarray:
    """Deterministic piecewise-smooth test image with a textured block, values in 0..255."""
    r, c = np.mgrid[0:size, 0:size] * (128.0 / size)
    img = 40 + 150 * c / 128
    img = np.where((r - 40) ** 2 + (c - 44) ** 2 < 22**2, 220.0, img)
    img = np.where((abs(r - 90) < 18) & (abs(c - 85) < 25), 30 + 20 * np.sin(c / 3.0), img)
    return img + 12 * np.sin(r / 9.0) * np.cos(c / 13.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scene():
    return synthetic_scene()


@pytest.fixture(scope="session")
def camera():
    from skimage import data

    return data.camera()[160:288, 200:328].astype(np.float64)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Print and keep one PASS/FAIL line, then fail the test if the check did not hold."""

    def record(criterion: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        if not ok:
            pytest.fail(line, pytrace=False)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
