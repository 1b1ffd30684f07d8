import numpy as np
import pytest

from uqwiz import Dense, Dropout, Relu, Softmax, build_sequential, generate_blobs


def random_softmax_stack(rng, n_inputs, n_samples, n_classes):
    """Valid (N, S, C) stack of softmax rows."""
    return rng.dirichlet(np.ones(n_classes), size=(n_inputs, n_samples))


def rational_softmax_rows(denominator, n_classes):
    """All rows with entries k/denominator summing to 1 (binary-exact for 4, 8)."""
    rows = []

    def build(prefix, remaining, slots):
        if slots == 1:
            rows.append(prefix + [remaining])
            return
        for take in range(remaining + 1):
            build(prefix + [take], remaining - take, slots - 1)

    build([], denominator, n_classes)
    return np.asarray(rows, dtype=np.float64) / denominator


@pytest.fixture
def tiny_classifier():
    """Fixed 2-4-2 dropout classifier; deterministic under its build seed."""
    layers = [Dense(2, 4), Relu(), Dropout(0.3), Dense(4, 2), Softmax()]
    return build_sequential(layers, seed=7)


@pytest.fixture
def blob_data():
    return generate_blobs(200, 2, 0.5, seed=11)
