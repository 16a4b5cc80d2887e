import os
from pathlib import Path

import numpy as np
import pytest

from ratenorm.data import write_idx


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """Directory holding MNIST images/labels as IDX files.

    Uses ``RATENORM_MNIST_DIR`` when set, otherwise writes the 5000-image
    MNIST sample bundled with mlxtend.
    """
    env = os.environ.get("RATENORM_MNIST_DIR")
    if env and (Path(env) / "images-idx3-ubyte").is_file():
        return Path(env)
    data = pytest.importorskip("mlxtend.data")
    x, y = data.mnist_data()
    out = tmp_path_factory.mktemp("mnist")
    write_idx(x.reshape(-1, 28, 28).astype(np.uint8), y.astype(np.uint8),
              out / "images-idx3-ubyte", out / "labels-idx1-ubyte")
    return out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
