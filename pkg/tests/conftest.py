import numpy as np
import pytest

from kanfault.features import FeatureMatrix

INFORMATIVE = 2  # zero-based column of "f3"


def separable_dataset(n=300, n_features=10, seed=7):
    """Two classes that differ only on column f3, with a margin of 2."""
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = rng.normal(size=(n, n_features))
    X[:, INFORMATIVE] = np.where(y == 1, 1.0, -1.0) * rng.uniform(1.0, 3.0, size=n)
    return X, y


def separable_matrix(n=300, seed=7) -> FeatureMatrix:
    X, y = separable_dataset(n, seed=seed)
    return FeatureMatrix(
        X, [f"f{i + 1}" for i in range(X.shape[1])], ["healthy" if v == 0 else "faulty" for v in y]
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def separable():
    return separable_dataset()
