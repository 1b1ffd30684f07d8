"""Do uncertainty scores find the inputs the model gets wrong?

Trains on overlapping blobs, evaluates on held-out data, and reports each
quantifier's AUROC as a misprediction detector: the probability that a wrong
prediction receives a higher uncertainty than a correct one (0.5 = chance).
"""

import numpy as np

from uqwiz import (
    Dense, Dropout, Relu, Softmax, TrainConfig, build_sequential,
    generate_blobs, split_dataset,
)
from uqwiz.metrics import evaluate_quantified

data = generate_blobs(num_points=1600, num_classes=2, spread=4.0, seed=104)
train, test = split_dataset(data, test_fraction=0.5, seed=4)

model = build_sequential(
    [Dense(2, 16), Relu(), Dropout(0.35), Dense(16, 2), Softmax()], seed=4)
model.fit(train.features, train.labels,
          TrainConfig(epochs=60, batch_size=32, learning_rate=0.5, seed=4))
model.fit(train.features, train.labels,
          TrainConfig(epochs=40, batch_size=32, learning_rate=0.1, seed=5))

names = ["var_ratio", "pred_entropy", "mutu_info", "pcs", "max_softmax"]
results = model.predict_quantified(test.features, names, num_samples=64)
rows = evaluate_quantified(results, names, test.labels)

print(f"test accuracy: {rows[0].accuracy:.3f} "
      f"({int((1 - rows[0].accuracy) * len(test))} mispredictions)\n")
print(f"{'quantifier':15s} {'AUROC':>6s}")
for row in rows:
    print(f"{row.quantifier:15s} {row.auroc:6.3f}")

print("\nEverything above 0.5 ranks wrong predictions ahead of correct ones;")
print("confidence scores are negated internally so that higher = more suspect.")
