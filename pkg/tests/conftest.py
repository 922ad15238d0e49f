import os
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent

# make the bundled digit files reachable no matter where pytest is invoked
os.environ.setdefault("FEDWARM_MNIST_DIR", str(ROOT / "data" / "mnist"))

from fedwarm.data import load_idx_dataset  # noqa: E402
from fedwarm.presets import mnist_dir  # noqa: E402


def mnist_paths():
    d = mnist_dir()
    return (
        os.path.join(d, "train-images-idx3-ubyte.gz"),
        os.path.join(d, "train-labels-idx1-ubyte.gz"),
        os.path.join(d, "t10k-images-idx3-ubyte.gz"),
        os.path.join(d, "t10k-labels-idx1-ubyte.gz"),
    )


@pytest.fixture(scope="session")
def mnist():
    return load_idx_dataset(*mnist_paths())
