import numpy as np
import pytest

from icsc_pose.dataset import generate_dataset
from icsc_pose.geometry import CylinderModel


@pytest.fixture
def cyl():
    return CylinderModel()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """12 images with a 8/4 train/val split, shared across tests."""
    path = tmp_path_factory.mktemp("data") / "tiny"
    records = generate_dataset(str(path), 12, seed=402, split=8)
    return str(path), records
