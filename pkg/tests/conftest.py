import numpy as np
import pytest
from hypothesis import settings

from advlab.data import make_synthetic
from advlab.losses import CEL
from advlab.optim import OneCycle
from advlab.train import TrainConfig, train

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy_data():
    tr = make_synthetic(3, 60, (8, 8), 3, 0.2, seed=7, sample_seed=1, template_scale=0.3)
    te = make_synthetic(3, 30, (8, 8), 3, 0.2, seed=7, sample_seed=2, template_scale=0.3)
    return tr, te


@pytest.fixture(scope="session")
def trained(toy_data):
    """A small PGD-trained MLP used wherever a 'trained model' is needed."""
    tr, te = toy_data
    cfg = TrainConfig(loss=CEL(), schedule=OneCycle(0.1, 6), epochs=6, batch_size=16, seed=3, dtype="float64")
    return train(cfg, tr, te, record_time=False)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
