"""Lazily persisted deep ensembles driven by supplier/mapper/consumer tasks.

A LazyEnsemble is a directory handle: n atomic models live on disk as
model_<i>.uwm files plus an ensemble.json manifest, and nothing is held in
memory between operations. Work flows through three task kinds, executed
either sequentially in the calling process (num_processes=0) or in a pool of
worker processes that the main process only coordinates:

    supplier(model_id, seed) -> (model, result)     creates + persists
    mapper(model_id, model)  -> (model, result)     loads, transforms, re-persists
    consumer(model_id, model) -> result             loads read-only

Generic task results are collected into a list ordered by model_id,
whatever the completion order. Models never cross a process boundary in
memory; the persisted file is the handoff. Task callables must be resolvable
in a freshly started process (module-level functions or functools.partial of
one), since workers may receive them by pickling.

Context handlers decide how workers are initialized: NoneContext pins
everything to the main process, DynamicGrowthContext lets k workers share
one unbounded slot, and DeviceAllocatorContext assigns workers to named
device slots with per-slot concurrency caps (the memory hint is exported to
the worker's environment but not enforced).
"""

from __future__ import annotations

import os
import queue as queue_mod
import time
import traceback
import warnings
from collections import deque
from dataclasses import dataclass, field
from hashlib import blake2b
from pathlib import Path

import multiprocessing as mp

import numpy as np

from .errors import (
    EnsembleStateError,
    EnsembleTaskError,
    PoolConfigError,
    ValidationError,
)
from .persist import load_model, model_path, save_model, write_manifest
from .quantifiers import convert_score, resolve_quantifiers

LOCK_NAME = ".uwlock"

SUPPLIER = "supplier"
MAPPER = "mapper"
CONSUMER = "consumer"


def derive_seed(base_seed: int, model_id: int) -> int:
    """Stable 64-bit per-model seed; identical on every platform and run."""
    digest = blake2b(digest_size=8)
    digest.update(int(base_seed).to_bytes(8, "little", signed=True))
    digest.update(int(model_id).to_bytes(8, "little", signed=True))
    return int.from_bytes(digest.digest(), "little")


def _mp_context():
    method = "fork" if "fork" in mp.get_all_start_methods() else "spawn"
    return mp.get_context(method)


# ---------------------------------------------------------------------------
# Pool configuration and context handlers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoolConfig:
    """How many workers, how many models each serves before respawn, base seed."""

    num_processes: int = 0
    models_per_process_before_respawn: int = 1
    base_seed: int = 0

    def __post_init__(self):
        if self.num_processes < 0:
            raise PoolConfigError("num_processes must be >= 0")
        if self.models_per_process_before_respawn < 1:
            raise PoolConfigError("models_per_process_before_respawn must be >= 1")


@dataclass(frozen=True)
class DeviceSlot:
    """One schedulable device: at most `capacity` workers occupy it at a time."""

    device_id: str
    capacity: int
    memory_hint: str | int | None = None


class ContextHandler:
    """Worker initialization policy; subclasses pick the slot layout."""

    def validate(self, pool: PoolConfig) -> None:
        pass

    def slot_tokens(self, num_processes: int) -> list[DeviceSlot] | None:
        """Finite token list (one per concurrent occupancy) or None = unbounded."""
        return None

    def worker_setup(self, slot: DeviceSlot | None) -> None:
        """Runs inside a freshly spawned worker before any task executes."""
        if slot is not None:
            os.environ["UQWIZ_DEVICE"] = str(slot.device_id)
            if slot.memory_hint is not None:
                os.environ["UQWIZ_DEVICE_MEMORY_HINT"] = str(slot.memory_hint)


class NoneContext(ContextHandler):
    """Sequential execution in the calling process; permits num_processes=0 only."""

    def validate(self, pool: PoolConfig) -> None:
        if pool.num_processes != 0:
            raise PoolConfigError(
                f"none_context permits only num_processes=0, got {pool.num_processes}"
            )


class DynamicGrowthContext(ContextHandler):
    """All workers share one unbounded slot."""

    def slot_tokens(self, num_processes: int) -> list[DeviceSlot] | None:
        return None


class DeviceAllocatorContext(ContextHandler):
    """User-declared slots with per-slot concurrency caps."""

    def __init__(self, slots: list[DeviceSlot]):
        if not slots:
            raise PoolConfigError("device allocator needs at least one slot")
        seen = set()
        for slot in slots:
            if slot.capacity < 1:
                raise PoolConfigError(f"slot {slot.device_id!r} capacity must be >= 1")
            if slot.device_id in seen:
                raise PoolConfigError(f"duplicate device_id {slot.device_id!r}")
            seen.add(slot.device_id)
        self.slots = list(slots)

    def validate(self, pool: PoolConfig) -> None:
        total = sum(s.capacity for s in self.slots)
        if pool.num_processes > total:
            raise PoolConfigError(
                f"slot capacities sum to {total}, cannot host {pool.num_processes} workers"
            )

    def slot_tokens(self, num_processes: int) -> list[DeviceSlot] | None:
        return [slot for slot in self.slots for _ in range(slot.capacity)]


_SHARED_SLOT = DeviceSlot("shared", capacity=1 << 30)


def _default_context(pool: PoolConfig) -> ContextHandler:
    return NoneContext() if pool.num_processes == 0 else DynamicGrowthContext()


# ---------------------------------------------------------------------------
# Instrumentation
# ---------------------------------------------------------------------------

@dataclass
class PoolStats:
    """Filled in by run_pool when passed as the stats argument."""

    worker_incarnations: int = 0
    peak_in_memory_models: int = 0
    occupancy_events: list = field(default_factory=list)  # (monotonic t, device_id, +1/-1)

    def max_slot_occupancy(self) -> dict[str, int]:
        current: dict[str, int] = {}
        peak: dict[str, int] = {}
        for _, device_id, delta in sorted(self.occupancy_events):
            current[device_id] = current.get(device_id, 0) + delta
            peak[device_id] = max(peak.get(device_id, 0), current[device_id])
        return peak


class _SharedGauge:
    """Cross-process current/peak counter for in-memory model instrumentation."""

    def __init__(self, ctx):
        self._current = ctx.Value("i", 0, lock=False)
        self._peak = ctx.Value("i", 0, lock=False)
        self._lock = ctx.Lock()

    def increment(self):
        with self._lock:
            self._current.value += 1
            if self._current.value > self._peak.value:
                self._peak.value = self._current.value

    def decrement(self):
        with self._lock:
            self._current.value -= 1

    @property
    def peak(self) -> int:
        with self._lock:
            return self._peak.value


# ---------------------------------------------------------------------------
# Task execution (shared by the sequential path and the workers)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Task:
    kind: str
    func: object
    directory: str


def _execute_task(task: _Task, model_id: int, seed: int, gauge: _SharedGauge):
    """Run one task id while holding exactly one model in memory."""
    path = model_path(task.directory, model_id)
    gauge.increment()
    try:
        if task.kind == SUPPLIER:
            model, value = task.func(model_id, seed)
            save_model(model, path)
        elif task.kind == MAPPER:
            model = load_model(path)
            model, value = task.func(model_id, model)
            save_model(model, path)
        elif task.kind == CONSUMER:
            model = load_model(path)
            value = task.func(model_id, model)
        else:
            raise ValueError(f"unknown task kind {task.kind!r}")
        return value
    finally:
        gauge.decrement()


def _worker_main(worker_uid, task, chunk, seeds, result_q, gauge, slot, context):
    context.worker_setup(slot)
    for model_id, seed in zip(chunk, seeds):
        try:
            value = _execute_task(task, model_id, seed, gauge)
            result_q.put(("ok", worker_uid, model_id, value))
        except BaseException:
            result_q.put(("err", worker_uid, model_id, traceback.format_exc()))
    result_q.put(("bye", worker_uid))


class _WorkerHandle:
    def __init__(self, process, chunk, slot):
        self.process = process
        self.chunk = list(chunk)
        self.slot = slot
        self.acked: set[int] = set()
        self.said_bye = False


# ---------------------------------------------------------------------------
# The pool itself
# ---------------------------------------------------------------------------

def run_pool(task: _Task, ids, pool: PoolConfig, context: ContextHandler | None = None,
             stats: PoolStats | None = None) -> list:
    """Execute a task for every id; results come back ordered by id.

    num_processes=0 runs everything sequentially in the calling process.
    Otherwise k workers execute tasks while the main process only
    coordinates: each worker incarnation receives up to
    models_per_process_before_respawn ids, then retires and is replaced. A
    crashed worker's unfinished ids are retried once on fresh workers. If any
    id still fails, EnsembleTaskError reports the whole failing set after all
    workers drain.
    """
    ids = list(ids)
    stats = stats if stats is not None else PoolStats()
    context = context or _default_context(pool)
    context.validate(pool)
    if pool.num_processes > len(ids):
        warnings.warn(
            f"num_processes={pool.num_processes} exceeds the {len(ids)} tasks; "
            "extra workers will idle", RuntimeWarning, stacklevel=2,
        )
    seeds = {i: derive_seed(pool.base_seed, i) for i in ids}
    ctx = _mp_context()
    gauge = _SharedGauge(ctx)

    results: dict[int, object] = {}
    failures: dict[int, str] = {}

    if pool.num_processes == 0:
        context.worker_setup(None)
        for model_id in ids:
            try:
                results[model_id] = _execute_task(task, model_id, seeds[model_id], gauge)
            except Exception:
                failures[model_id] = traceback.format_exc()
    else:
        _run_workers(task, ids, seeds, pool, context, ctx, gauge, results, failures, stats)

    stats.peak_in_memory_models = gauge.peak
    if failures:
        summary = ", ".join(str(i) for i in sorted(failures))
        raise EnsembleTaskError(
            f"{len(failures)} of {len(ids)} tasks failed (ids {summary}); "
            f"first failure:\n{failures[min(failures)]}", failures,
        )
    return [results[i] for i in ids]


def _run_workers(task, ids, seeds, pool, context, ctx, gauge, results, failures, stats):
    k = pool.num_processes
    chunk_size = pool.models_per_process_before_respawn
    tokens = context.slot_tokens(k)
    free_slots = deque(tokens) if tokens is not None else None
    result_q = ctx.Queue()
    pending = deque(ids)
    retries: dict[int, int] = {}
    live: dict[int, _WorkerHandle] = {}
    next_uid = 0

    def acquire_slot():
        if free_slots is None:
            slot = _SHARED_SLOT
        else:
            slot = free_slots.popleft()
        stats.occupancy_events.append((time.monotonic(), slot.device_id, +1))
        return slot

    def release_slot(slot):
        stats.occupancy_events.append((time.monotonic(), slot.device_id, -1))
        if free_slots is not None:
            free_slots.append(slot)

    def open_ids():
        return len(results) + len(failures) < len(ids)

    def crash_or_fail(model_id):
        attempts = retries.get(model_id, 0)
        if attempts < 1:
            retries[model_id] = attempts + 1
            pending.append(model_id)
        else:
            failures[model_id] = "worker process died while executing this task (after one retry)"

    def handle_message(message):
        kind, uid = message[0], message[1]
        handle = live.get(uid)
        if kind == "ok":
            results[message[2]] = message[3]
            if handle:
                handle.acked.add(message[2])
        elif kind == "err":
            failures[message[2]] = message[3]
            if handle:
                handle.acked.add(message[2])
        elif kind == "bye" and handle:
            handle.said_bye = True

    def drain_now():
        while True:
            try:
                handle_message(result_q.get_nowait())
            except queue_mod.Empty:
                return

    while open_ids() or live:
        while pending and len(live) < k:
            chunk = [pending.popleft() for _ in range(min(chunk_size, len(pending)))]
            slot = acquire_slot()
            uid = next_uid
            next_uid += 1
            process = ctx.Process(
                target=_worker_main,
                args=(uid, task, chunk, [seeds[i] for i in chunk], result_q, gauge,
                      None if slot is _SHARED_SLOT else slot, context),
                daemon=True,
            )
            process.start()
            stats.worker_incarnations += 1
            live[uid] = _WorkerHandle(process, chunk, slot)

        try:
            handle_message(result_q.get(timeout=0.05))
        except queue_mod.Empty:
            pass

        for uid in list(live):
            handle = live[uid]
            if not handle.said_bye and not handle.process.is_alive():
                # exited: its remaining messages are already flushed into the
                # pipe, so drain before judging which chunk ids crashed
                handle.process.join()
                drain_now()
                if not handle.said_bye:
                    for model_id in handle.chunk:
                        if model_id not in handle.acked:
                            crash_or_fail(model_id)
                    handle.said_bye = True  # treat as retired either way
            if handle.said_bye:
                if handle.process.is_alive():
                    continue
                handle.process.join()
                release_slot(handle.slot)
                del live[uid]

    result_q.close()
    result_q.join_thread()


# ---------------------------------------------------------------------------
# The ensemble handle
# ---------------------------------------------------------------------------

class _DirectoryLock:
    def __init__(self, directory):
        self.path = Path(directory, LOCK_NAME)

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise EnsembleStateError(
                f"{self.path} exists: another pool run is active on this ensemble "
                "(delete the lock file if that run is known to be dead)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc_info):
        self.path.unlink(missing_ok=True)


class LazyEnsemble:
    """Directory-backed handle on n atomic models; holds none of them in memory.

    The handle itself is immutable and cheap to share; all real work happens
    inside create/modify/consume and the quantified-prediction wrappers. Two
    pool runs on the same directory must not overlap (enforced via a lock
    file).
    """

    def __init__(self, path, num_models: int, default_context: ContextHandler | None = None):
        if num_models < 2:
            raise ValidationError(f"an ensemble needs num_models > 1, got {num_models}")
        self.path = Path(path)
        self.num_models = int(num_models)
        self.default_context = default_context

    # -- plumbing -----------------------------------------------------------

    def _pool(self, pool) -> PoolConfig:
        if pool is None:
            return PoolConfig()
        if isinstance(pool, int):
            return PoolConfig(num_processes=pool)
        return pool

    def _context(self, context, pool: PoolConfig) -> ContextHandler:
        return context or self.default_context or _default_context(pool)

    def _model_ids(self):
        return range(self.num_models)

    def _missing_models(self) -> list[int]:
        return [i for i in self._model_ids() if not model_path(self.path, i).is_file()]

    def _run(self, task: _Task, pool, context, stats):
        pool = self._pool(pool)
        context = self._context(context, pool)
        with _DirectoryLock(self.path):
            return run_pool(task, self._model_ids(), pool, context, stats)

    # -- the three task surfaces ---------------------------------------------

    def create(self, supplier, pool: PoolConfig | int | None = None,
               context: ContextHandler | None = None, stats: PoolStats | None = None) -> list:
        """Invoke supplier(model_id, seed) for every id and persist the models.

        The directory must not already contain model files. Returns the
        suppliers' generic results ordered by model_id; on failure, partial
        files of failed ids are removed and EnsembleTaskError is raised.
        """
        self.path.mkdir(parents=True, exist_ok=True)
        existing = [i for i in self._model_ids() if model_path(self.path, i).is_file()]
        if existing:
            raise EnsembleStateError(
                f"{self.path} already contains model files (ids {existing}); refusing to overwrite"
            )
        pool_cfg = self._pool(pool)
        task = _Task(SUPPLIER, supplier, str(self.path))
        try:
            results = self._run(task, pool_cfg, context, stats)
        except EnsembleTaskError as error:
            for model_id in error.failed_ids:
                model_path(self.path, model_id).unlink(missing_ok=True)
            raise
        write_manifest(self.path, self.num_models, pool_cfg.base_seed)
        return results

    def modify(self, mapper, pool: PoolConfig | int | None = None,
               context: ContextHandler | None = None, stats: PoolStats | None = None) -> list:
        """Pass every persisted model through mapper(model_id, model) and re-persist."""
        missing = self._missing_models()
        if missing:
            raise EnsembleStateError(f"{self.path} is missing model files for ids {missing}")
        return self._run(_Task(MAPPER, mapper, str(self.path)), pool, context, stats)

    def consume(self, consumer, pool: PoolConfig | int | None = None,
                context: ContextHandler | None = None, stats: PoolStats | None = None) -> list:
        """Run consumer(model_id, model) read-only over every persisted model."""
        missing = self._missing_models()
        if missing:
            raise EnsembleStateError(f"{self.path} is missing model files for ids {missing}")
        return self._run(_Task(CONSUMER, consumer, str(self.path)), pool, context, stats)

    # -- quantified prediction ------------------------------------------------

    def predict_quantified(self, x, quantifiers, pool: PoolConfig | int | None = None,
                           context: ContextHandler | None = None,
                           as_confidence: bool | None = None,
                           stats: PoolStats | None = None):
        """Forward x through every atomic model and quantify the sample stack.

        Each atomic model contributes one sample, so only sampling-based
        quantifiers apply ('ensembling' is the canonical choice).
        """
        x = np.asarray(x, dtype=np.float64)
        consumer = _ForwardConsumer(x)
        return self.quantify_predictions(quantifiers, consumer, pool, context,
                                         as_confidence, stats)

    def quantify_predictions(self, quantifiers, consumer,
                             pool: PoolConfig | int | None = None,
                             context: ContextHandler | None = None,
                             as_confidence: bool | None = None,
                             stats: PoolStats | None = None):
        """Like predict_quantified, but the consumer produces the model outputs."""
        descriptors, single = resolve_quantifiers(quantifiers)
        for desc in descriptors:
            if not desc.is_sampling_based:
                raise ValidationError(
                    f"{desc.canonical_name!r} is a point-predictor quantifier and cannot "
                    "aggregate an ensemble; quantify on a single atomic model instead"
                )
        outputs = self.consume(consumer, pool, context, stats)
        stacked = _stack_outputs(outputs)
        results = [convert_score(d.func(stacked), as_confidence) for d in descriptors]
        return results[0] if single else results


class _ForwardConsumer:
    """Picklable consumer closing over the prediction inputs."""

    def __init__(self, x: np.ndarray):
        self.x = x

    def __call__(self, model_id, model):
        return model.forward(self.x)


def _stack_outputs(outputs: list) -> np.ndarray:
    """Assemble per-model (N, C) outputs into an (N, S=num_models, C) stack."""
    arrays = []
    shape = None
    for model_id, value in enumerate(outputs):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError(
                f"consumer for model {model_id} returned a {arr.ndim}-axis value, expected 2-axis outputs"
            )
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise ValidationError(
                f"consumer outputs disagree in shape: model {model_id} gave {arr.shape}, expected {shape}"
            )
        arrays.append(arr)
    return np.stack(arrays, axis=1)
