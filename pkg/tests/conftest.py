import os
from pathlib import Path

import hypothesis
import numpy as np
import pytest

from cnnma.cnn import Architecture, init_network
from cnnma.mnist_io import ImageSet, LabelSet, MiniBatch, one_hot, serialize_images, serialize_labels

hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.register_profile("dev", max_examples=200, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = Path(os.environ.get("CNNMA_MNIST_DIR", ROOT / "data" / "mnist"))

# 8x8 inputs: conv5 -> 4x4, pool -> 2x2, conv1 -> 2x2, pool -> 1x1 (111 parameters)
TINY_ARCH = Architecture(input_size=(8, 8), conv_maps=(2, 3), kernel_sizes=(5, 1))


@pytest.fixture
def tiny_net():
    net = init_network(TINY_ARCH, seed=1)
    # move beta/bias off their init values so every parameter matters
    net.params += np.random.default_rng(0).normal(0.0, 0.3, net.n_params)
    return net


def random_batch(rng, n, size=(8, 8)):
    return MiniBatch(rng.random((n, *size)), one_hot(rng.integers(0, 10, n)), np.arange(n))


@pytest.fixture
def tiny_batch():
    return random_batch(np.random.default_rng(2), 4)


def synthetic_digits(n, seed):
    """Learnable stand-in for MNIST: class c lights a 7x7 block at a class-specific spot."""
    rng = np.random.default_rng(seed)
    labels = np.tile(np.arange(10, dtype=np.uint8), n // 10 + 1)[:n]
    rng.shuffle(labels)
    pixels = (rng.random((n, 28, 28)) * 60).astype(np.uint8)
    for i, c in enumerate(labels):
        r, q = divmod(int(c), 5)
        pixels[i, 3 + 12 * r : 10 + 12 * r, 1 + 5 * q : 8 + 5 * q] = 230
    return ImageSet(pixels), LabelSet(labels)


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synthetic_mnist")
    for stem, n, seed in (("train", 600, 0), ("t10k", 200, 1)):
        images, labels = synthetic_digits(n, seed)
        (d / f"{stem}-images-idx3-ubyte").write_bytes(serialize_images(images))
        (d / f"{stem}-labels-idx1-ubyte").write_bytes(serialize_labels(labels))
    return d


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
