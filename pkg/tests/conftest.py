import numpy as np
import pytest

from biobench.data import Dataset, make_shapes
from biobench.models import NetworkConfig
from biobench.network import LayerSpec, build_network


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_specs():
    """Two convs, a pool and a dense head on 3x8x8 input."""
    return [
        LayerSpec(kind="conv", fan_out=4, kernel=3, padding=1, activation="tanh"),
        LayerSpec(kind="pool", kernel=2, stride=2),
        LayerSpec(kind="conv", fan_out=5, kernel=3, padding=1, activation="tanh"),
        LayerSpec(kind="dense", fan_out=3, activation="identity"),
    ]


@pytest.fixture
def toy_net(toy_specs):
    return build_network(toy_specs, "linear", seed=0, input_shape=(3, 8, 8))


@pytest.fixture(scope="session")
def shapes():
    return make_shapes(per_class_train=30, per_class_test=20, seed=0)


@pytest.fixture
def small_network_config():
    # conv 4x3x3x3 = 108 weights, dense 3 x 64 = 192 weights: 300 in total
    return NetworkConfig(conv_channels=[4], kernel=3, padding=1, pool=2)


@pytest.fixture
def separable():
    """Two well-separated 2-D blobs, labels 0 and 1."""
    g = np.random.default_rng(7)
    a = g.normal(loc=(-2.0, -2.0), scale=0.3, size=(50, 2))
    b = g.normal(loc=(2.0, 2.0), scale=0.3, size=(50, 2))
    images = np.vstack([a, b])
    labels = np.repeat([0, 1], 50).astype(np.int64)
    train = Dataset(images, labels, 2, "train")
    test = Dataset(images.copy(), labels.copy(), 2, "test")
    return train, test
