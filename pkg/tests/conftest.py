"""Shared fixtures and small builders for the test suite."""

import numpy as np
import pytest

from cmwnet.models import Classifier, WeightNet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_classifier(rng, d=3, hidden=(5,), C=4):
    """A classifier small enough for finite-difference checks."""
    return Classifier.init([d] + list(hidden) + [C], rng)


def tiny_weightnet(rng, K=3, hidden=8):
    return WeightNet.init(K, rng, hidden=hidden)


def random_batch(rng, n, d, C):
    x = rng.normal(size=(n, d))
    y = rng.integers(0, C, size=n)
    return x, y
