import numpy as np
import pytest

from revmark import training as tr
from revmark.data import cover_set
from revmark.iflow import Geometry

from helpers import calibrated_theta

PIPE_GEOMETRY = Geometry(64, 64, 1, 8, 2, 8)


@pytest.fixture(scope="session")
def trained64():
    """Small model fitted to four 64x64 covers (identity channel, large lambda_w)."""
    covers = cover_set(0, 4, 64)
    cfg = tr.TrainConfig(geometry=PIPE_GEOMETRY, epochs=50, batch_size=1, lr=1e-3, pool=(),
                         weights=tr.LossWeights(w=1e6))
    return tr.train(cfg, covers).theta, covers


@pytest.fixture(scope="session")
def calibrated64():
    return calibrated_theta(PIPE_GEOMETRY, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE = {}


def record(n: int, passed: bool, detail: str) -> None:
    """Store one acceptance line; printed in the terminal summary."""
    ACCEPTANCE[n] = f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}"
    print(ACCEPTANCE[n])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
