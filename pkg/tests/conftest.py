import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dqvc import FunctionalDataset  # noqa: E402

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_dataset(n=30, J=8, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, J)
    X = np.column_stack([np.ones(n), rng.binomial(1, 0.5, n), rng.uniform(size=n)])
    mean = np.stack([X @ [1.0, 0.5, -1.0], X @ [0.0, -0.5, 2.0]], axis=-1)[:, None, :]
    Y = mean + np.sin(2 * t)[None, :, None] + scale * rng.normal(size=(n, J, 2))
    return FunctionalDataset(t, Y, X, tuple(f"id{i}" for i in range(n)))


@pytest.fixture
def small_data():
    return make_dataset()
