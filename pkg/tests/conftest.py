"""Shared fixtures and data builders for the test suite."""

import numpy as np
import pytest
from scipy.special import expit

from svylasso.glm import LOGIT, Dataset
from svylasso.lasso import fit_penalized


def make_dataset(n, p, seed=0, weighted=True, binary=True, theta=None):
    """Simulated logit dataset with an intercept and p regressors."""
    rng = np.random.default_rng(seed)
    if binary:
        Xt = (rng.random((n, p)) < 0.5).astype(float)
    else:
        Xt = rng.standard_normal((n, p))
    if theta is None:
        theta = np.zeros(p + 1)
        theta[0] = 0.3
        theta[1: min(p, 3) + 1] = 1.0
    t = theta[0] + Xt @ theta[1:]
    y = (rng.random(n) < expit(t)).astype(float)
    w = rng.uniform(0.5, 2.0, size=n) if weighted else np.ones(n)
    return Dataset.from_arrays(y, Xt, w)


@pytest.fixture
def small_ds():
    return make_dataset(80, 3, seed=11)


@pytest.fixture
def medium_ds():
    return make_dataset(200, 5, seed=7)


@pytest.fixture
def medium_fit(medium_ds):
    return fit_penalized(medium_ds, LOGIT, lam=0.02)
