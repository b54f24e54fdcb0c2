from pathlib import Path

import numpy as np
import pytest

from gramsr import featurenet as fn

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def weights():
    return fn.init_random_weights(0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


@pytest.fixture(scope="session")
def texture():
    from gramsr.imagecore import load_image
    return load_image(DATA / "texture.png")


ACCEPTANCE_LINES: list[str] = []


def report(number: int, ok: bool, text: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
