"""Quantifiers: pure functions turning network outputs into (prediction, score) pairs.

Two families. Point-predictor quantifiers (PPQ) read a single softmax pass,
shape (inputs, classes). Sampling-based quantifiers (SBQ) read a stack of
sampled passes, shape (inputs, samples, classes) with the samples of one
input contiguous along axis 1. Every quantifier returns a QuantifiedResult
whose score is either a confidence (higher = more trustworthy) or an
uncertainty (higher = more suspect).

Scores use the natural logarithm where entropies are involved, so the
entropy of a uniform distribution over C classes is exactly ln(C). All
argmax tie-breaks resolve to the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import InsufficientSamplesError, UnknownQuantifierError, ValidationError

CONFIDENCE = "confidence"
UNCERTAINTY = "uncertainty"

CLASSIFICATION = "classification"
REGRESSION = "regression"

# Tolerance for "each softmax row sums to 1".
ROW_SUM_TOL = 1e-6


@dataclass
class QuantifiedResult:
    """Per-input predictions plus a score array of the stated kind.

    predictions: class indices (classification) or mean output vectors
    (regression), length N along axis 0. scores: one real per input.
    score_kind: CONFIDENCE or UNCERTAINTY.
    """

    predictions: np.ndarray
    scores: np.ndarray
    score_kind: str

    def __post_init__(self):
        if self.score_kind not in (CONFIDENCE, UNCERTAINTY):
            raise ValidationError(f"score_kind must be {CONFIDENCE!r} or {UNCERTAINTY!r}, got {self.score_kind!r}")
        if len(self.predictions) != len(self.scores):
            raise ValidationError(
                f"predictions ({len(self.predictions)}) and scores ({len(self.scores)}) differ in length"
            )


@dataclass(frozen=True)
class QuantifierDescriptor:
    """Registry entry for one quantifier."""

    canonical_name: str
    aliases: frozenset[str]
    is_sampling_based: bool
    native_kind: str
    problem_type: str
    func: Callable[[np.ndarray], QuantifiedResult]


# ---------------------------------------------------------------------------
# Input validation
# ---------------------------------------------------------------------------

def _as_float_array(values, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValidationError(f"{name} must be a {ndim}-axis array, got {arr.ndim} axes (shape {arr.shape})")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def validate_single_outputs(outputs) -> np.ndarray:
    """Validate a (N, C) stack of softmax rows and return it as float64."""
    arr = _as_float_array(outputs, "outputs", 2)
    n, c = arr.shape
    if n < 1:
        raise ValidationError("outputs must contain at least one row")
    if c < 2:
        raise ValidationError(f"classification outputs need at least 2 classes, got {c}")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        bad = int(np.argwhere((arr < 0.0) | (arr > 1.0))[0, 0])
        raise ValidationError(f"outputs row {bad} has entries outside [0, 1]")
    row_sums = arr.sum(axis=1)
    off = np.abs(row_sums - 1.0) > ROW_SUM_TOL
    if np.any(off):
        bad = int(np.argmax(off))
        raise ValidationError(f"outputs row {bad} sums to {row_sums[bad]:.9f}, expected 1 within {ROW_SUM_TOL}")
    return arr


def validate_sampled_outputs(samples, min_samples: int = 2) -> np.ndarray:
    """Validate a (N, S, C) stack of sampled softmax rows and return it as float64."""
    arr = _as_float_array(samples, "samples", 3)
    n, s, c = arr.shape
    if n < 1:
        raise ValidationError("samples must contain at least one input")
    if c < 2:
        raise ValidationError(f"classification samples need at least 2 classes, got {c}")
    if s < min_samples:
        raise InsufficientSamplesError(f"need at least {min_samples} samples per input, got {s}")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        n_bad, s_bad = np.argwhere((arr < 0.0) | (arr > 1.0))[0, :2]
        raise ValidationError(f"samples row (input {n_bad}, sample {s_bad}) has entries outside [0, 1]")
    row_sums = arr.sum(axis=2)
    off = np.abs(row_sums - 1.0) > ROW_SUM_TOL
    if np.any(off):
        n_bad, s_bad = np.argwhere(off)[0]
        raise ValidationError(
            f"samples row (input {n_bad}, sample {s_bad}) sums to {row_sums[n_bad, s_bad]:.9f}, "
            f"expected 1 within {ROW_SUM_TOL}"
        )
    return arr


def validate_regression_samples(samples) -> np.ndarray:
    """Validate a (N, S, D) stack of regression outputs; no normalization constraint."""
    arr = _as_float_array(samples, "samples", 3)
    if arr.shape[0] < 1:
        raise ValidationError("samples must contain at least one input")
    if arr.shape[1] < 2:
        raise InsufficientSamplesError(f"need at least 2 samples per input, got {arr.shape[1]}")
    return arr


def _entropy(p: np.ndarray, axis: int) -> np.ndarray:
    # 0 * ln(0) := 0
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -terms.sum(axis=axis)


def _sample_mean(arr: np.ndarray) -> np.ndarray:
    """Mean over the sample axis with two exactness guarantees.

    Summing pairwise over a contiguous axis keeps exactly-representable
    (dyadic) inputs exact, so genuinely tied mean entries stay ties and
    argmax tie-breaking is reproducible against a brute-force oracle. Inputs
    whose samples are all identical short-circuit to the sample itself, so
    zero dispersion reproduces the sample bit-exactly for any sample count.
    """
    s = arr.shape[1]
    mean = np.ascontiguousarray(np.swapaxes(arr, 1, 2)).sum(axis=2) / s
    identical = np.all(arr == arr[:, :1, :], axis=(1, 2))
    if np.any(identical):
        mean[identical] = arr[identical, 0, :]
    return mean


# ---------------------------------------------------------------------------
# Point-predictor quantifiers
# ---------------------------------------------------------------------------

def max_softmax(outputs) -> QuantifiedResult:
    """Predicted class = argmax; confidence = its softmax value."""
    arr = validate_single_outputs(outputs)
    preds = arr.argmax(axis=1)
    return QuantifiedResult(preds, arr.max(axis=1), CONFIDENCE)


def prediction_confidence_score(outputs) -> QuantifiedResult:
    """Confidence = gap between the highest and second-highest softmax value."""
    arr = validate_single_outputs(outputs)
    preds = arr.argmax(axis=1)
    top2 = np.sort(arr, axis=1)[:, -2:]
    return QuantifiedResult(preds, top2[:, 1] - top2[:, 0], CONFIDENCE)


# ---------------------------------------------------------------------------
# Sampling-based quantifiers
# ---------------------------------------------------------------------------

def _vote_counts(arr: np.ndarray) -> np.ndarray:
    n, s, c = arr.shape
    votes = np.zeros((n, c), dtype=np.int64)
    np.add.at(votes, (np.repeat(np.arange(n), s), arr.argmax(axis=2).ravel()), 1)
    return votes


def variation_ratio(samples) -> QuantifiedResult:
    """Uncertainty = 1 - (relative frequency of the modal predicted class)."""
    arr = validate_sampled_outputs(samples)
    votes = _vote_counts(arr)
    preds = votes.argmax(axis=1)
    mode_freq = votes[np.arange(len(votes)), preds] / arr.shape[1]
    return QuantifiedResult(preds, 1.0 - mode_freq, UNCERTAINTY)


def predictive_entropy(samples) -> QuantifiedResult:
    """Uncertainty = Shannon entropy of the sample-averaged distribution."""
    arr = validate_sampled_outputs(samples)
    mean = _sample_mean(arr)
    return QuantifiedResult(mean.argmax(axis=1), _entropy(mean, axis=1), UNCERTAINTY)


def mutual_information(samples) -> QuantifiedResult:
    """Uncertainty = entropy of the mean minus mean per-sample entropy (>= 0)."""
    arr = validate_sampled_outputs(samples)
    mean = _sample_mean(arr)
    mi = _entropy(mean, axis=1) - _entropy(arr, axis=2).mean(axis=1)
    return QuantifiedResult(mean.argmax(axis=1), np.maximum(mi, 0.0), UNCERTAINTY)


def mean_softmax(samples) -> QuantifiedResult:
    """Prediction and confidence of the sample-averaged distribution.

    The canonical deep-ensemble quantifier (alias 'ensembling'); accepts a
    single sample, in which case it reduces to max_softmax.
    """
    arr = validate_sampled_outputs(samples, min_samples=1)
    mean = _sample_mean(arr)
    return QuantifiedResult(mean.argmax(axis=1), mean.max(axis=1), CONFIDENCE)


def standard_deviation(samples) -> QuantifiedResult:
    """Regression quantifier: mean prediction, uncertainty = mean per-dim population std."""
    arr = validate_regression_samples(samples)
    preds = _sample_mean(arr)
    # population std (divisor S); exactly 0 for identical samples because
    # _sample_mean reproduces them bit-exactly
    stds = np.sqrt(((arr - preds[:, None, :]) ** 2).mean(axis=1))
    return QuantifiedResult(preds, stds.mean(axis=1), UNCERTAINTY)


# ---------------------------------------------------------------------------
# Score conversion and alias registry
# ---------------------------------------------------------------------------

def convert_score(result: QuantifiedResult, as_confidence: bool | None = None) -> QuantifiedResult:
    """Convert a result to the requested kind by negating its scores.

    With as_confidence=None the result is returned unchanged. Negation (rather
    than 1 - x) keeps unbounded scores meaningful and preserves ranking.
    """
    if as_confidence is None:
        return result
    want = CONFIDENCE if as_confidence else UNCERTAINTY
    if result.score_kind == want:
        return result
    return replace(result, scores=-result.scores, score_kind=want)


def _descriptor(name, aliases, sampling, kind, problem, func):
    return QuantifierDescriptor(name, frozenset(aliases), sampling, kind, problem, func)


QUANTIFIERS: tuple[QuantifierDescriptor, ...] = (
    _descriptor("max_softmax", {"max_softmax", "softmax", "sm"}, False, CONFIDENCE, CLASSIFICATION, max_softmax),
    _descriptor("prediction_confidence_score", {"pcs"}, False, CONFIDENCE, CLASSIFICATION, prediction_confidence_score),
    _descriptor("variation_ratio", {"var_ratio", "variation_ratio", "vr"}, True, UNCERTAINTY, CLASSIFICATION, variation_ratio),
    _descriptor("predictive_entropy", {"pred_entropy", "predictive_entropy", "pe"}, True, UNCERTAINTY, CLASSIFICATION, predictive_entropy),
    _descriptor("mutual_information", {"mutu_info", "mutual_information", "mi"}, True, UNCERTAINTY, CLASSIFICATION, mutual_information),
    _descriptor("mean_softmax", {"mean_softmax", "ensembling", "ms"}, True, CONFIDENCE, CLASSIFICATION, mean_softmax),
    _descriptor("standard_deviation", {"std", "stddev", "standard_deviation"}, True, UNCERTAINTY, REGRESSION, standard_deviation),
)


def _build_alias_table() -> dict[str, QuantifierDescriptor]:
    table: dict[str, QuantifierDescriptor] = {}
    for desc in QUANTIFIERS:
        for alias in desc.aliases | {desc.canonical_name}:
            key = alias.lower()
            if key in table and table[key] is not desc:
                raise RuntimeError(f"alias {alias!r} registered twice")
            table[key] = desc
    return table


_ALIAS_TABLE = _build_alias_table()


def known_aliases() -> list[str]:
    """All resolvable alias strings, sorted."""
    return sorted(_ALIAS_TABLE)


def lookup_quantifier(alias: str) -> QuantifierDescriptor:
    """Resolve an alias (case-insensitive) to its descriptor."""
    if isinstance(alias, QuantifierDescriptor):
        return alias
    try:
        return _ALIAS_TABLE[str(alias).lower()]
    except KeyError:
        raise UnknownQuantifierError(
            f"unknown quantifier {alias!r}; known aliases: {', '.join(known_aliases())}"
        ) from None


def resolve_quantifiers(quantifiers) -> tuple[list[QuantifierDescriptor], bool]:
    """Resolve one alias/descriptor or a list of them.

    Returns (descriptors, was_single) so callers can mirror the input shape
    in their own return value.
    """
    if isinstance(quantifiers, (str, QuantifierDescriptor)):
        return [lookup_quantifier(quantifiers)], True
    descs = [lookup_quantifier(q) for q in quantifiers]
    if not descs:
        raise ValidationError("at least one quantifier is required")
    return descs, False
