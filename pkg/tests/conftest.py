import numpy as np
import pytest

from mvfh import Dataset


def random_dataset(rng, m=10, k=2, s=3, d_scale=1.0):
    """A valid random dataset: full-rank covariates and PD sampling covariances."""
    X = rng.normal(size=(m, k, s))
    d_list = []
    for _ in range(m):
        root = rng.normal(size=(k, k))
        d_list.append(root @ root.T + d_scale * np.eye(k))
    y = rng.normal(size=(m, k))
    return Dataset(y, X, np.stack(d_list))


def scalar_dataset(y, d, x=None):
    """k=1 dataset from plain lists; x defaults to an intercept column."""
    m = len(y)
    if x is None:
        x = [[1.0]] * m
    return Dataset(
        np.asarray(y, dtype=float).reshape(m, 1),
        np.asarray(x, dtype=float).reshape(m, 1, -1),
        np.asarray(d, dtype=float).reshape(m, 1, 1),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
