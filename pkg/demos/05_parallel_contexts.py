"""Context handlers and the shape of the parallel speedup.

Compares sequential ensemble creation against a 2-worker pool, then shows the
device-allocator context capping per-slot concurrency (two named slots with
capacity 1 each). Absolute times depend on the machine; the point is the
relative reduction and the occupancy bookkeeping.
"""

import os
import tempfile
import time
from pathlib import Path

from uqwiz import (
    Dense, DeviceAllocatorContext, DeviceSlot, Dropout, LazyEnsemble,
    PoolConfig, PoolStats, Relu, Softmax, TrainConfig, build_sequential,
    generate_blobs,
)

DATA = generate_blobs(num_points=3000, num_classes=2, spread=1.5, seed=9)


def supplier(model_id, seed):
    model = build_sequential(
        [Dense(2, 16), Relu(), Dropout(0.1), Dense(16, 2), Softmax()], seed=seed)
    model.fit(DATA.features, DATA.labels,
              TrainConfig(epochs=80, batch_size=32, learning_rate=0.5, seed=seed))
    return model, None


print(f"machine has {os.cpu_count()} cores\n")
timings = {}
for workers in (0, 2):
    with tempfile.TemporaryDirectory() as tmp:
        ensemble = LazyEnsemble(Path(tmp) / "e", num_models=6)
        stats = PoolStats()
        started = time.perf_counter()
        ensemble.create(supplier, pool=PoolConfig(num_processes=workers, base_seed=9),
                        stats=stats)
        timings[workers] = time.perf_counter() - started
        print(f"num_processes={workers}: {timings[workers]:5.2f}s  "
              f"peak in-memory models={stats.peak_in_memory_models}")
reduction = 100 * (1 - timings[2] / timings[0])
print(f"wall-clock reduction with 2 workers: {reduction:.0f}%\n")

context = DeviceAllocatorContext([DeviceSlot("gpu0", capacity=1, memory_hint="2GiB"),
                                  DeviceSlot("gpu1", capacity=1, memory_hint="2GiB")])
with tempfile.TemporaryDirectory() as tmp:
    ensemble = LazyEnsemble(Path(tmp) / "e", num_models=6)
    stats = PoolStats()
    ensemble.create(supplier, pool=PoolConfig(num_processes=2, base_seed=9),
                    context=context, stats=stats)
print("device allocator max per-slot occupancy:", stats.max_slot_occupancy())
print("each worker saw its slot in UQWIZ_DEVICE; capacities were never exceeded")
