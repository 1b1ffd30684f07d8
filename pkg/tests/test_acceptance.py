"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion lines.
Criteria with statistical content use frozen seeds, so they are exactly
reproducible. The parallel-speedup half of criterion 7 requires >= 4 physical
cores and skips (with the reason shown) on smaller machines; every other
criterion runs everywhere.
"""

import hashlib
import math
import os
import time

import numpy as np
import pytest

from uqwiz import (
    ChecksumError,
    Dense,
    DeviceAllocatorContext,
    DeviceSlot,
    Dropout,
    LazyEnsemble,
    PoolConfig,
    PoolStats,
    Relu,
    Softmax,
    TrainConfig,
    TruncatedFileError,
    build_sequential,
    generate_blobs,
    load_model,
    lookup_quantifier,
    save_model,
    sign_test_pvalue,
    split_dataset,
    standard_deviation,
)
from uqwiz.metrics import evaluate_quantified
from uqwiz.persist import model_path
from uqwiz.quantifiers import mutual_information, predictive_entropy, variation_ratio
import oracles
import pooltasks
from test_persist import random_model


def _ok(number, text):
    print(f"\nPASS criterion {number}: {text}")


def test_criterion_1_quantifier_oracle_equivalence():
    """All seven quantifiers match brute-force references on 1,000 randomized
    instances with N<=5, S<=8, C<=4, exact to 1e-12, in under 5 s."""
    oracle_map = {
        "max_softmax": oracles.oracle_max_softmax,
        "prediction_confidence_score": oracles.oracle_pcs,
        "variation_ratio": oracles.oracle_variation_ratio,
        "predictive_entropy": oracles.oracle_predictive_entropy,
        "mutual_information": oracles.oracle_mutual_information,
        "mean_softmax": oracles.oracle_mean_softmax,
    }
    rng = np.random.default_rng(2024)
    started = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        s = int(rng.integers(2, 9))
        c = int(rng.integers(2, 5))
        stack = rng.dirichlet(np.ones(c), size=(n, s))
        for name, oracle in oracle_map.items():
            desc = lookup_quantifier(name)
            data = stack[:, 0, :] if not desc.is_sampling_based else stack
            result = desc.func(data)
            expect_preds, expect_scores = oracle(data.tolist())
            np.testing.assert_array_equal(result.predictions, expect_preds)
            np.testing.assert_allclose(result.scores, expect_scores, atol=1e-12)
        regression = rng.normal(size=(n, s, int(rng.integers(1, 4))))
        result = standard_deviation(regression)
        expect_preds, expect_scores = oracles.oracle_standard_deviation(regression.tolist())
        np.testing.assert_allclose(result.predictions, expect_preds, atol=1e-12)
        np.testing.assert_allclose(result.scores, expect_scores, atol=1e-12)
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"oracle sweep took {elapsed:.2f}s"
    _ok(1, f"7 quantifiers == brute-force oracles on 1000 instances at 1e-12 ({elapsed:.2f}s)")


def test_criterion_2_analytic_fixtures():
    """predictive_entropy(uniform, C=4) = ln 4, MI of opposite one-hots = ln 2
    (each within 1e-12), unanimous variation_ratio exactly 0."""
    uniform = np.tile(np.full(4, 0.25), (1, 3, 1))
    assert abs(predictive_entropy(uniform).scores[0] - math.log(4)) <= 1e-12
    opposite = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    assert abs(mutual_information(opposite).scores[0] - math.log(2)) <= 1e-12
    unanimous = np.tile([0.1, 0.7, 0.2], (2, 5, 1))
    assert variation_ratio(unanimous).scores.tolist() == [0.0, 0.0]
    _ok(2, "ln4 / ln2 fixtures within 1e-12; unanimous variation ratio exactly 0")


def test_criterion_3_stochastic_mode_contract():
    """Mode off: 100 repeated passes bit-identical on a dropout model. Mode on
    at p=0.5: mean of 10,000 sampled activations within 3 SE of the
    deterministic activation. Under 30 s."""
    started = time.perf_counter()
    model = build_sequential(
        [Dense(2, 8), Relu(), Dropout(0.5), Dense(8, 2), Softmax()], seed=33)
    x = np.random.default_rng(33).normal(size=(16, 2))
    reference = model.forward(x)
    for _ in range(100):
        np.testing.assert_array_equal(model.forward(x), reference)

    # observe the activation right after dropout: identity weights, no head
    probe = build_sequential(
        [Dense(weights=np.eye(4), biases=np.zeros(4)), Dropout(0.5)], seed=34)
    ones = np.ones((10_000, 4))
    probe.stochastic_mode.enabled = True
    try:
        sampled = probe.forward(ones)
    finally:
        probe.stochastic_mode.enabled = False
    # per-element variance of inverted dropout at activation 1: p/(1-p) = 1
    standard_error = math.sqrt(1.0 / 10_000)
    deviations = np.abs(sampled.mean(axis=0) - 1.0)
    assert np.all(deviations <= 3 * standard_error), deviations
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    _ok(3, f"100 passes bit-identical; sampled mean within 3 SE at p=0.5 ({elapsed:.2f}s)")


def test_criterion_4_ppq_sbq_coexistence():
    """One call with ['pcs', 'var_ratio'] returns both; its pcs half is
    bit-identical to a separate PPQ-only call."""
    model = build_sequential(
        [Dense(2, 8), Relu(), Dropout(0.3), Dense(8, 3), Softmax()], seed=44)
    x = np.random.default_rng(44).normal(size=(12, 2))
    both = model.predict_quantified(x, ["pcs", "var_ratio"], num_samples=16)
    assert len(both) == 2
    alone = model.predict_quantified(x, "pcs")
    np.testing.assert_array_equal(both[0].predictions, alone.predictions)
    np.testing.assert_array_equal(both[0].scores, alone.scores)
    assert both[1].score_kind == "uncertainty"
    _ok(4, "mixed-call pcs result bit-identical to PPQ-only call")


def test_criterion_5_gradient_check():
    """Analytic gradients of the 2-4-2 cross-entropy network match central
    finite differences (h=1e-5) within 1e-4 relative error."""
    model = build_sequential([Dense(2, 4), Relu(), Dense(4, 2), Softmax()], seed=55)
    rng = np.random.default_rng(55)
    x = rng.normal(size=(10, 2))
    y = rng.integers(0, 2, size=10)
    h = 1e-5
    _, grads = model.loss_and_gradients(x, y, "cross_entropy")
    checked = 0
    for layer, grad in zip(model.layers, grads):
        if grad is None:
            continue
        for arr, analytic in ((layer.weights, grad[0]), (layer.biases, grad[1])):
            flat = arr.ravel()
            for idx in range(flat.size):
                keep = flat[idx]
                flat[idx] = keep + h
                up, _ = model.loss_and_gradients(x, y, "cross_entropy")
                flat[idx] = keep - h
                down, _ = model.loss_and_gradients(x, y, "cross_entropy")
                flat[idx] = keep
                numeric = (up - down) / (2 * h)
                denom = max(abs(numeric), abs(analytic.ravel()[idx]), 1e-8)
                assert abs(analytic.ravel()[idx] - numeric) / denom <= 1e-4
                checked += 1
    assert checked == 2 * 4 + 4 + 4 * 2 + 2
    _ok(5, f"{checked} parameters within 1e-4 relative of central differences")


def test_criterion_6_ensemble_determinism_and_laziness(tmp_path):
    """create() under num_processes in {0, 2, 4} yields byte-identical model
    files for a fixed base seed; instrumented peak concurrent in-memory
    models never exceeds max(1, k)."""
    data = generate_blobs(200, 2, 1.5, seed=66)
    supplier = pooltasks.BlobTrainingSupplier(data.features, data.labels, epochs=3)
    digests = {}
    for k in (0, 2, 4):
        stats = PoolStats()
        ens = LazyEnsemble(tmp_path / f"ens_k{k}", num_models=4)
        ens.create(supplier, pool=PoolConfig(num_processes=k, base_seed=66), stats=stats)
        digests[k] = [hashlib.sha256(model_path(ens.path, i).read_bytes()).hexdigest()
                      for i in range(4)]
        assert stats.peak_in_memory_models <= max(1, k), (k, stats.peak_in_memory_models)
    assert digests[0] == digests[2] == digests[4]
    _ok(6, "byte-identical models for k in {0,2,4}; peak in-memory models <= max(1,k)")


def test_criterion_7_device_allocator_occupancy(tmp_path):
    """Two capacity-1 slots with two workers: per-slot occupancy never
    exceeds 1 (the Table-1-style '(processes)' column at desk scale)."""
    data = generate_blobs(200, 2, 1.5, seed=77)
    supplier = pooltasks.BlobTrainingSupplier(data.features, data.labels, epochs=3)
    context = DeviceAllocatorContext([DeviceSlot("gpu0", 1), DeviceSlot("gpu1", 1)])
    stats = PoolStats()
    ens = LazyEnsemble(tmp_path / "ens", num_models=6)
    ens.create(supplier, pool=PoolConfig(num_processes=2, base_seed=77),
               context=context, stats=stats)
    occupancy = stats.max_slot_occupancy()
    assert set(occupancy) == {"gpu0", "gpu1"}
    assert occupancy["gpu0"] <= 1 and occupancy["gpu1"] <= 1
    _ok(7, f"device allocator per-slot occupancy {occupancy} never exceeded capacity 1")


@pytest.mark.skipif((os.cpu_count() or 1) < 4,
                    reason="criterion applies on >= 4-core machines; "
                           f"this machine has {os.cpu_count()} core(s)")
def test_criterion_7_parallel_speedup(tmp_path):
    """Training 8 atomic models (blobs, 16-unit hidden layer, 50 epochs) with
    k=4 reduces wall clock by >= 35% vs k=0, in under 5 minutes total."""
    started = time.perf_counter()
    data = generate_blobs(3000, 2, 1.5, seed=78)
    supplier = pooltasks.BlobTrainingSupplier(data.features, data.labels,
                                              epochs=50, hidden=16, dropout=0.1)
    timings = {}
    for k in (0, 4):
        ens = LazyEnsemble(tmp_path / f"bench_k{k}", num_models=8)
        t0 = time.perf_counter()
        ens.create(supplier, pool=PoolConfig(num_processes=k, base_seed=78))
        timings[k] = time.perf_counter() - t0
    reduction = 1.0 - timings[4] / timings[0]
    total = time.perf_counter() - started
    assert total < 300.0
    assert reduction >= 0.35, f"only {reduction:.1%} ({timings[0]:.1f}s -> {timings[4]:.1f}s)"
    _ok(7, f"k=4 cut wall clock by {reduction:.0%} vs k=0 "
           f"({timings[0]:.1f}s -> {timings[4]:.1f}s)")


def test_criterion_8_misprediction_detection():
    """Across 10 seeds on overlapping blobs, the mean AUROC of var_ratio,
    pred_entropy and pcs each exceeds 0.5, one-sided sign test at alpha=0.05.
    Under 2 minutes."""
    started = time.perf_counter()
    names = ["var_ratio", "pred_entropy", "pcs"]
    aurocs = {name: [] for name in names}
    for seed in range(10):
        data = generate_blobs(1600, 2, 4.0, seed=100 + seed)
        train, test = split_dataset(data, 0.5, seed=seed)
        model = build_sequential(
            [Dense(2, 16), Relu(), Dropout(0.35), Dense(16, 2), Softmax()], seed=seed)
        model.fit(train.features, train.labels,
                  TrainConfig(epochs=60, batch_size=32, learning_rate=0.5, seed=seed))
        model.fit(train.features, train.labels,
                  TrainConfig(epochs=40, batch_size=32, learning_rate=0.1, seed=seed + 1))
        results = model.predict_quantified(test.features, names, num_samples=64)
        for row, name in zip(evaluate_quantified(results, names, test.labels), names):
            assert row.auroc is not None, f"seed {seed} produced no mispredictions"
            aurocs[name].append(row.auroc)
    for name in names:
        values = aurocs[name]
        mean = float(np.mean(values))
        wins = sum(v > 0.5 for v in values)
        p_value = sign_test_pvalue(wins, len(values))
        assert mean > 0.5, f"{name}: mean AUROC {mean:.3f}"
        assert p_value < 0.05, f"{name}: {wins}/10 wins, sign test p={p_value:.4f}"
    elapsed = time.perf_counter() - started
    assert elapsed < 120.0
    means = {n: round(float(np.mean(v)), 3) for n, v in aurocs.items()}
    _ok(8, f"mean AUROCs {means}, all sign tests significant ({elapsed:.1f}s)")


def test_criterion_9_ensemble_beats_mean_atomic(tmp_path):
    """Over 10 seeds, mean test accuracy of a 5-member 'ensembling' ensemble
    is at least the mean accuracy of its individual members (means, not
    per-seed)."""
    ensemble_accs, member_mean_accs = [], []
    for seed in range(10):
        data = generate_blobs(900, 2, 3.5, seed=200 + seed)
        train, test = split_dataset(data, 0.4, seed=seed)
        supplier = pooltasks.BlobTrainingSupplier(train.features, train.labels,
                                                  epochs=12, hidden=16, dropout=0.1)
        ens = LazyEnsemble(tmp_path / f"seed{seed}", num_models=5)
        ens.create(supplier, pool=PoolConfig(base_seed=seed))
        outputs = ens.consume(pooltasks.ForwardConsumer(test.features))
        member_mean_accs.append(np.mean(
            [np.mean(out.argmax(axis=1) == test.labels) for out in outputs]))
        result = ens.predict_quantified(test.features, "ensembling")
        ensemble_accs.append(np.mean(result.predictions == test.labels))
    mean_ensemble = float(np.mean(ensemble_accs))
    mean_members = float(np.mean(member_mean_accs))
    assert mean_ensemble >= mean_members, (mean_ensemble, mean_members)
    _ok(9, f"mean ensemble accuracy {mean_ensemble:.4f} >= mean member accuracy {mean_members:.4f}")


def test_criterion_10_persistence_round_trip(tmp_path):
    """100 random models survive save/load with bit-identical forward outputs;
    corrupted and truncated fixtures raise their designated error kinds."""
    rng = np.random.default_rng(1010)
    path = tmp_path / "model.uwm"
    for _ in range(100):
        model = random_model(rng)
        save_model(model, path)
        loaded = load_model(path)
        x = rng.normal(size=(5, model.input_dim))
        np.testing.assert_array_equal(model.forward(x), loaded.forward(x))

    save_model(random_model(rng), path)
    blob = bytearray(path.read_bytes())
    corrupt = tmp_path / "corrupt.uwm"
    flipped = bytearray(blob)
    flipped[len(flipped) // 2] ^= 0x01
    corrupt.write_bytes(flipped)
    with pytest.raises(ChecksumError):
        load_model(corrupt)
    truncated = tmp_path / "short.uwm"
    truncated.write_bytes(bytes(blob[:-3]))
    with pytest.raises(TruncatedFileError):
        load_model(truncated)
    _ok(10, "100 round-trips bit-identical; corruption and truncation raise their error kinds")
