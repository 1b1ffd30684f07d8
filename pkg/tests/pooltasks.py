"""Module-level task callables for pool tests (workers receive them by pickling)."""

import os
import time
from pathlib import Path

import numpy as np

from uqwiz import Dense, Dropout, Relu, Softmax, TrainConfig, build_sequential


def fixed_model():
    layers = [Dense(weights=np.eye(2), biases=np.zeros(2)), Softmax()]
    return build_sequential(layers, seed=0)


class FixedSupplier:
    """Same tiny model for every id; result = the model_id (bookkeeping check)."""

    def __call__(self, model_id, seed):
        return fixed_model(), model_id


class SeededSupplier:
    """Weights depend on the derived seed; result = the seed received."""

    def __call__(self, model_id, seed):
        layers = [Dense(2, 6), Relu(), Dropout(0.1), Dense(6, 2), Softmax()]
        return build_sequential(layers, seed=seed), seed


class PidSupplier:
    def __call__(self, model_id, seed):
        return fixed_model(), os.getpid()


class SleepySupplier:
    """Later ids finish first, scrambling completion order."""

    def __init__(self, num_models, delay=0.08):
        self.num_models = num_models
        self.delay = delay

    def __call__(self, model_id, seed):
        time.sleep((self.num_models - model_id) * self.delay)
        return fixed_model(), model_id


class FailingSupplier:
    def __init__(self, fail_ids):
        self.fail_ids = set(fail_ids)

    def __call__(self, model_id, seed):
        if model_id in self.fail_ids:
            raise ValueError(f"supplier refused id {model_id}")
        return fixed_model(), model_id


class CrashOnceSupplier:
    """Hard-kills its worker on the first attempt per id, succeeds on retry."""

    def __init__(self, marker_dir):
        self.marker_dir = str(marker_dir)

    def __call__(self, model_id, seed):
        marker = Path(self.marker_dir) / f"attempted_{model_id}"
        if not marker.exists():
            marker.touch()
            os._exit(17)
        return fixed_model(), "retried"


class AlwaysCrashSupplier:
    def __init__(self, crash_ids):
        self.crash_ids = set(crash_ids)

    def __call__(self, model_id, seed):
        if model_id in self.crash_ids:
            os._exit(23)
        return fixed_model(), model_id


class BusySupplier:
    """CPU-bound training-like load for speedup measurements."""

    def __init__(self, inner_loops=40):
        self.inner_loops = inner_loops

    def __call__(self, model_id, seed):
        rng = np.random.default_rng(seed)
        w1 = rng.normal(size=(2, 16))
        w2 = rng.normal(size=(16, 2))
        x = rng.normal(size=(3000, 2))
        for _ in range(self.inner_loops):
            for start in range(0, 3000, 32):
                xb = x[start:start + 32]
                h = np.maximum(xb @ w1, 0.0)
                z = h @ w2
                p = np.exp(z - z.max(axis=1, keepdims=True))
                p /= p.sum(axis=1, keepdims=True)
                w2 -= 1e-4 * (h.T @ p)
                w1 -= 1e-4 * (xb.T @ ((p @ w2.T) * (h > 0)))
        layers = [Dense(weights=w1.T.copy(), biases=np.zeros(16)), Relu(),
                  Dense(weights=w2.T.copy(), biases=np.zeros(2)), Softmax()]
        return build_sequential(layers, seed=seed), model_id


class BlobTrainingSupplier:
    """Trains a small dropout classifier on fixed data with the derived seed."""

    def __init__(self, features, labels, epochs=15, hidden=16, dropout=0.1,
                 learning_rate=0.5):
        self.features = np.asarray(features)
        self.labels = np.asarray(labels)
        self.epochs = epochs
        self.hidden = hidden
        self.dropout = dropout
        self.learning_rate = learning_rate

    def __call__(self, model_id, seed):
        n_classes = int(self.labels.max()) + 1
        layers = [Dense(self.features.shape[1], self.hidden), Relu(), Dropout(self.dropout),
                  Dense(self.hidden, n_classes), Softmax()]
        model = build_sequential(layers, seed=seed)
        config = TrainConfig(epochs=self.epochs, batch_size=32,
                             learning_rate=self.learning_rate, seed=seed)
        history = model.fit(self.features, self.labels, config)
        return model, history[-1]


class HistorySupplier:
    """Trains briefly and returns the full per-epoch loss history as T."""

    def __init__(self, features, labels, epochs=2):
        self.features = np.asarray(features)
        self.labels = np.asarray(labels)
        self.epochs = epochs

    def __call__(self, model_id, seed):
        n_classes = int(self.labels.max()) + 1
        layers = [Dense(self.features.shape[1], 4), Relu(),
                  Dense(4, n_classes), Softmax()]
        model = build_sequential(layers, seed=seed)
        config = TrainConfig(epochs=self.epochs, batch_size=32, learning_rate=0.3, seed=seed)
        return model, model.fit(self.features, self.labels, config)


def identity_mapper(model_id, model):
    return model, model_id


def zero_bias_mapper(model_id, model):
    for layer in model.layers:
        if isinstance(layer, Dense):
            layer.biases[:] = 0.0
    return model, model_id


class RaiseOnIdMapper:
    def __init__(self, fail_id):
        self.fail_id = fail_id

    def __call__(self, model_id, model):
        if model_id == self.fail_id:
            raise RuntimeError(f"mapper exploded on id {model_id}")
        return model, model_id


def layer_count_consumer(model_id, model):
    return len(model.layers)


class ForwardConsumer:
    def __init__(self, x):
        self.x = np.asarray(x, dtype=np.float64)

    def __call__(self, model_id, model):
        return model.forward(self.x)


class ConstantClassConsumer:
    def __init__(self, n_inputs):
        self.n_inputs = n_inputs

    def __call__(self, model_id, model):
        out = np.zeros((self.n_inputs, 3))
        out[:, 0] = 1.0
        return out


class WrongWidthConsumer:
    """Model 2 returns a different output width than the others."""

    def __call__(self, model_id, model):
        width = 3 if model_id == 2 else 2
        return np.full((4, width), 1.0 / width)
