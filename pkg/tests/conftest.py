import numpy as np
import pytest
import torch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Twelve 16^3 records; small enough for multi-run harness tests."""
    from gazeattn.synthetic import GazeSimConfig, PhantomConfig, build_dataset

    out = tmp_path_factory.mktemp("tiny")
    build_dataset(12, PhantomConfig(shape=(16, 16, 16), blob_radius=(2.0, 3.0), seed=4), GazeSimConfig(), out,
                  split=(0.5, 0.25, 0.25))
    return out / "manifest.json"
