import numpy as np
import pytest

from flextclus.data import MultiTaskDataset


def random_dataset(rng, D=4, T=3, n=12, noise=0.1, shared=False):
    """Gaussian design, random weights (one shared column if `shared`)."""
    W = rng.normal(size=(D, 1 if shared else T)) * np.ones((1, T))
    designs, targets = [], []
    for t in range(T):
        X = rng.normal(size=(n, D))
        designs.append(X)
        targets.append(X @ W[:, t] + noise * rng.normal(size=n))
    return MultiTaskDataset.from_arrays(designs, targets)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
