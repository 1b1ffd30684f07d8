"""MC-Dropout on one model instance: point predictions and sampled uncertainty.

A dropout layer is inert during normal prediction, but predict_quantified
flips the model's stochastic mode on for sampling-based quantifiers, runs
num_samples randomized passes per input, and restores determinism afterwards.
One model therefore serves both quantifier families, even in a single call.
"""

import numpy as np

from uqwiz import (
    Dense, Dropout, Relu, Softmax, TrainConfig, build_sequential, generate_blobs,
)

data = generate_blobs(num_points=600, num_classes=2, spread=2.5, seed=7)
model = build_sequential(
    [Dense(2, 24), Relu(), Dropout(0.3), Dense(24, 2), Softmax()], seed=7)
model.fit(data.features, data.labels,
          TrainConfig(epochs=40, batch_size=32, learning_rate=0.5, seed=7))

# determinism check: dropout is off outside of sampling
x = data.features[:5]
assert np.array_equal(model.forward(x), model.forward(x))
print("plain forward passes are deterministic (dropout inert)")

# one call, mixed quantifier kinds: pcs is single-pass, the rest are sampled
results = model.predict_quantified(
    x, ["pcs", "var_ratio", "pred_entropy", "mutu_info"], num_samples=64)
print(f"\none call returned {len(results)} results, order preserved:")
for alias, result in zip(("pcs", "var_ratio", "pred_entropy", "mutu_info"), results):
    scores = ", ".join(f"{s:.3f}" for s in result.scores)
    print(f"  {alias:13s} [{result.score_kind:11s}] {scores}")
assert model.stochastic_mode.enabled is False
print("\nstochastic mode is off again after the call")

# uncertainty should peak near the boundary between two class centers
c0 = data.features[data.labels == 0].mean(axis=0)
c1 = data.features[data.labels == 1].mean(axis=0)
line = np.linspace(0, 1, 13)[:, None] * (c1 - c0) + c0
entropy = model.predict_quantified(line, "pred_entropy", num_samples=64)
print("\npredictive entropy walking from center 0 to center 1:")
print("  " + " ".join(f"{s:.2f}" for s in entropy.scores))
ends = (entropy.scores[0] + entropy.scores[-1]) / 2
print(f"peak along the walk: {entropy.scores.max():.2f} vs {ends:.2f} at the centers")
