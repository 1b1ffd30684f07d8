"""Misprediction-detection metrics: accuracy, rank-based AUROC, sign test.

AUROC is used here as "the probability that a wrong prediction receives a
higher detector score than a correct one" (ties count half), computed from
midranks, so it is exact under ties and needs no threshold sweep.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import ValidationError
from .quantifiers import UNCERTAINTY, QuantifiedResult


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValidationError(f"predictions {predictions.shape} vs labels {labels.shape}")
    if predictions.size == 0:
        raise ValidationError("cannot compute accuracy of zero predictions")
    return float(np.mean(predictions == labels))


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_values = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # 1-based midrank
        i = j + 1
    return ranks


def auroc(scores, positives) -> float | None:
    """Mann-Whitney AUROC of `scores` detecting `positives`, midrank ties.

    Returns None when positives are all or none of the population (the curve
    is undefined there).
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape or scores.ndim != 1:
        raise ValidationError("scores and positives must be 1-axis arrays of equal length")
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _midranks(scores)
    rank_sum = ranks[positives].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def detector_scores(result: QuantifiedResult) -> np.ndarray:
    """Orient scores so that higher = more likely wrong."""
    return result.scores if result.score_kind == UNCERTAINTY else -result.scores


@dataclass
class EvaluationRow:
    """One quantifier's misprediction-detection summary."""

    quantifier: str
    accuracy: float
    auroc: float | None


def evaluate_quantified(results, quantifier_names, labels) -> list[EvaluationRow]:
    """Score each QuantifiedResult as a misprediction detector on labeled data."""
    labels = np.asarray(labels)
    rows = []
    for result, name in zip(results, quantifier_names):
        predictions = np.asarray(result.predictions)
        wrong = predictions != labels
        rows.append(EvaluationRow(
            quantifier=name,
            accuracy=float(np.mean(~wrong)),
            auroc=auroc(detector_scores(result), wrong),
        ))
    return rows


def sign_test_pvalue(successes: int, trials: int) -> float:
    """One-sided exact binomial tail: P(X >= successes) under p = 1/2."""
    if not 0 <= successes <= trials:
        raise ValidationError(f"successes must lie in [0, {trials}]")
    return sum(comb(trials, i) for i in range(successes, trials + 1)) / 2.0 ** trials
