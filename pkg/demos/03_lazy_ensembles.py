"""Deep ensembles that live on disk and run through worker processes.

A LazyEnsemble holds no models in memory: create() trains each member in a
worker process (or the main process for num_processes=0) and persists it to
its own .uwm file; consume() and modify() load members one at a time inside
the workers. Generic task results come back as a list ordered by model id.

Task callables must be importable in a fresh process, so they are defined at
module level here.
"""

import tempfile
import time
from pathlib import Path

import numpy as np

from uqwiz import (
    Dense, Dropout, LazyEnsemble, PoolConfig, PoolStats, Relu, Softmax,
    TrainConfig, build_sequential, generate_blobs,
)

DATA = generate_blobs(num_points=800, num_classes=2, spread=3.5, seed=3)


def supplier(model_id, seed):
    """Train one member; the derived seed varies init and shuffling."""
    model = build_sequential(
        [Dense(2, 16), Relu(), Dropout(0.1), Dense(16, 2), Softmax()], seed=seed)
    history = model.fit(DATA.features, DATA.labels,
                        TrainConfig(epochs=12, batch_size=32, learning_rate=0.5, seed=seed))
    return model, history[-1]


def accuracy_consumer(model_id, model):
    predictions = model.forward(DATA.features).argmax(axis=1)
    return float(np.mean(predictions == DATA.labels))


def bias_shrink_mapper(model_id, model):
    for layer in model.layers:
        if hasattr(layer, "biases") and layer.biases is not None:
            layer.biases *= 0.5
    return model, model_id


with tempfile.TemporaryDirectory() as tmp:
    ensemble = LazyEnsemble(Path(tmp) / "members", num_models=6)

    stats = PoolStats()
    started = time.perf_counter()
    losses = ensemble.create(supplier, pool=PoolConfig(num_processes=2, base_seed=3),
                             stats=stats)
    print(f"trained 6 members in {time.perf_counter() - started:.1f}s with 2 workers")
    print(f"final losses: {[round(float(l), 3) for l in losses]}")
    print(f"worker incarnations: {stats.worker_incarnations}, "
          f"peak models in memory: {stats.peak_in_memory_models}")
    print("on disk:", sorted(p.name for p in ensemble.path.iterdir()))

    accuracies = ensemble.consume(accuracy_consumer)
    print(f"\nper-member training accuracy: {[round(a, 3) for a in accuracies]}")

    result = ensemble.predict_quantified(DATA.features[:8], "ensembling")
    print(f"ensembling predictions: {result.predictions.tolist()}")
    print(f"ensembling confidences: {[round(float(s), 3) for s in result.scores]}")

    ensemble.modify(bias_shrink_mapper)
    print("\nmodify() rewrote every member atomically (bias shrink applied)")
