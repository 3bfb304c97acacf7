import numpy as np
import pytest

from cenn_forge.netspec import load_network, network_from_dict, random_weights


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def design1(rng):
    return random_weights(load_network("mnist_design1"), rng)


@pytest.fixture
def design2(rng):
    return random_weights(load_network("mnist_design2"), rng)


def small_net(layers, maps=1, size=8, classes=3, name="small"):
    return network_from_dict({
        "name": name,
        "input": {"maps": maps, "rows": size, "cols": size},
        "classes": classes,
        "layers": layers,
    })


@pytest.fixture
def tiny_mean_net(rng):
    """Three-channel net with a mean readout, a scaled-down CIFAR topology."""
    net = small_net([
        {"name": "conv1", "kind": "conv", "out_maps": 5},
        {"name": "relu1", "kind": "relu"},
        {"name": "pool1", "kind": "pool", "pool_kind": "max_linear", "downsample": True},
        {"name": "conv2", "kind": "conv", "out_maps": 3, "readout": "mean"},
    ], maps=3, classes=3, name="tiny_mean")
    return random_weights(net, rng)
