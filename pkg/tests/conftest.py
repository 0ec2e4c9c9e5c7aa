import numpy as np
import pytest

from interseg.dataio import generate_synthetic, make_splits
from interseg.nn import NetworkSpec, build_network


@pytest.fixture(scope="session")
def micro_dataset():
    """6 patients x 2 slices at 32x32: enough structure for loop tests."""
    vols = generate_synthetic(6, 2, size=(32, 32), seed=7)
    split = make_splits(vols, sizes=(3, 1, 1, 1), seed=7)
    return vols, split


@pytest.fixture(scope="session")
def tiny_models():
    """Untrained base + editor pair for plumbing tests (C=3)."""
    rng = np.random.default_rng(0)
    base = build_network(NetworkSpec(in_channels=1, num_classes=3,
                                     base_channels=4), rng=rng)
    editor = build_network(NetworkSpec(in_channels=8, num_classes=3,
                                       base_channels=4), rng=rng)
    return base, editor
