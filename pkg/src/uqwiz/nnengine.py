"""Minimal sequential feed-forward networks with prediction-time stochastic dropout.

The layer menu is deliberately small (dense, relu, softmax, dropout): it is
the smallest stack that exercises every uncertainty mechanism. Dropout layers
are bound to a per-model StochasticMode switch; they are inert during plain
prediction, always active during training, and active during prediction only
while the mode is enabled. predict_quantified flips the mode on for
sampling-based quantifiers, replicates the inputs lazily, and restores the
mode afterwards, so one model instance serves both point-predictor and
sampling-based quantification.

All arithmetic is float64. Randomness is fully seeded: weight init streams
derive from the build seed, prediction-time dropout masks derive from
(model seed, call counter), and training randomness derives from the
TrainConfig seed. Built or loaded twice with the same seeds, a model is
bit-identical.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientSamplesError,
    ModelConstructionError,
    TrainingDivergedError,
    ValidationError,
)
from .quantifiers import (
    CLASSIFICATION,
    REGRESSION,
    convert_score,
    resolve_quantifiers,
)

CROSS_ENTROPY = "cross_entropy"
MEAN_SQUARED_ERROR = "mean_squared_error"

_SEED_MASK = 0xFFFFFFFFFFFFFFFF
# spawn_key stream tags: weight init, prediction-time dropout, shuffle, training dropout
_INIT_STREAM = 0
_SAMPLE_STREAM = 1
_SHUFFLE_STREAM = 2
_TRAIN_DROPOUT_STREAM = 3


def _stream_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & _SEED_MASK, spawn_key=(stream, index))
    return np.random.default_rng(ss)


class StochasticMode:
    """Per-model boolean switch read by that model's randomized layers."""

    __slots__ = ("enabled",)

    def __init__(self, enabled: bool = False):
        self.enabled = enabled


class Dense:
    """Affine layer y = W x + b with W of shape (out_dim, in_dim).

    Pass explicit weights/biases for a fixed layer, or just dimensions to have
    build_sequential() initialize them (Glorot-uniform weights, zero biases).
    in_dim may be omitted when a preceding layer determines the width.
    """

    kind = "dense"

    def __init__(self, in_dim: int | None = None, out_dim: int | None = None,
                 weights=None, biases=None):
        if weights is not None:
            weights = np.asarray(weights, dtype=np.float64)
            if weights.ndim != 2:
                raise ModelConstructionError("dense weights must be a 2-axis array")
            out_dim = weights.shape[0] if out_dim is None else out_dim
            in_dim = weights.shape[1] if in_dim is None else in_dim
            if weights.shape != (out_dim, in_dim):
                raise ModelConstructionError(
                    f"dense weights shape {weights.shape} does not match ({out_dim}, {in_dim})"
                )
        if out_dim is None or out_dim < 1 or (in_dim is not None and in_dim < 1):
            raise ModelConstructionError("dense layer needs positive in_dim and out_dim")
        if biases is not None:
            biases = np.asarray(biases, dtype=np.float64)
            if biases.shape != (out_dim,):
                raise ModelConstructionError(f"dense biases shape {biases.shape} != ({out_dim},)")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weights = weights
        self.biases = biases


class Relu:
    kind = "relu"


class Softmax:
    kind = "softmax"


class Dropout:
    """Inverted dropout: zero with probability rate, scale survivors by 1/(1-rate)."""

    kind = "dropout"

    def __init__(self, rate: float):
        rate = float(rate)
        if not 0.0 <= rate < 1.0:
            raise ModelConstructionError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        # Bound by build_sequential / stochastic_from_plain; None = inert at prediction.
        self.mode: StochasticMode | None = None

    def _apply(self, x: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep) / keep
        return x * mask, mask


LayerSpec = Dense | Relu | Softmax | Dropout


@dataclass
class TrainConfig:
    """Minibatch-SGD settings; seed drives shuffling and training dropout."""

    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.1
    loss: str = CROSS_ENTROPY
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.loss not in (CROSS_ENTROPY, MEAN_SQUARED_ERROR):
            raise ValidationError(f"loss must be {CROSS_ENTROPY!r} or {MEAN_SQUARED_ERROR!r}")


class SequentialModel:
    """Ordered layer stack sharing one StochasticMode.

    Mutable per-model state (the mode and the dropout call counter) means one
    model must be driven by at most one thread at a time; distinct models are
    fully independent.
    """

    def __init__(self, layers: list, stochastic_mode: StochasticMode, rng_seed: int,
                 problem_type: str):
        self.layers = layers
        self.stochastic_mode = stochastic_mode
        self.rng_seed = int(rng_seed)
        self.problem_type = problem_type
        self._sample_calls = 0

    # -- shape helpers ------------------------------------------------------

    @property
    def input_dim(self) -> int | None:
        for layer in self.layers:
            if isinstance(layer, Dense):
                return layer.in_dim
        return None

    @property
    def output_dim(self) -> int | None:
        width = None
        for layer in self.layers:
            if isinstance(layer, Dense):
                width = layer.out_dim
        return width

    def has_randomized_layers(self) -> bool:
        return any(isinstance(l, Dropout) and l.mode is not None for l in self.layers)

    # -- forward ------------------------------------------------------------

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValidationError(f"inputs must be a 2-axis (batch, features) array, got shape {x.shape}")
        expect = self.input_dim
        if expect is not None and x.shape[1] != expect:
            raise ValidationError(f"input width {x.shape[1]} does not match model input width {expect}")
        return x

    def _next_sample_rng(self) -> np.random.Generator:
        rng = _stream_rng(self.rng_seed, _SAMPLE_STREAM, self._sample_calls)
        self._sample_calls += 1
        return rng

    def _run_layers(self, x: np.ndarray, dropout_rng, cache: list | None = None,
                    training: bool = False) -> np.ndarray:
        """Walk the stack. A dropout layer samples when training, or when its
        bound mode is enabled; otherwise it is the identity.

        When cache is supplied, records (layer, layer_input, extra) per layer
        for backpropagation; extra is the dropout mask or None.
        """
        for layer in self.layers:
            extra = None
            if isinstance(layer, Dense):
                out = x @ layer.weights.T + layer.biases
            elif isinstance(layer, Relu):
                out = np.maximum(x, 0.0)
            elif isinstance(layer, Softmax):
                shifted = x - x.max(axis=1, keepdims=True)
                e = np.exp(shifted)
                out = e / e.sum(axis=1, keepdims=True)
            elif isinstance(layer, Dropout):
                active = training or (layer.mode is not None and layer.mode.enabled)
                if active and dropout_rng is not None:
                    out, extra = layer._apply(x, dropout_rng)
                else:
                    out = x
            else:
                raise ModelConstructionError(f"unknown layer type {type(layer).__name__}")
            if cache is not None:
                cache.append((layer, x, extra))
            x = out
        return x

    def forward(self, inputs) -> np.ndarray:
        """One pass over a (batch, in_dim) array.

        Deterministic while the stochastic mode is off; with the mode on,
        bound dropout layers sample a fresh mask stream per call.
        """
        x = self._check_input(inputs)
        rng = None
        if self.stochastic_mode.enabled and self.has_randomized_layers():
            rng = self._next_sample_rng()
        return self._run_layers(x, rng)

    # -- training -----------------------------------------------------------

    def loss_and_gradients(self, x, y, loss: str = CROSS_ENTROPY,
                           dropout_rng: np.random.Generator | None = None):
        """Loss plus analytic gradients for one batch.

        Returns (loss_value, grads) where grads aligns with the layer list:
        (dW, db) for dense layers, None otherwise. Dropout is applied iff
        dropout_rng is given (training behavior), with the same mask reused
        in the backward pass.
        """
        x = self._check_input(x)
        batch = x.shape[0]
        cache: list = []
        out = self._run_layers(x, dropout_rng, cache, training=dropout_rng is not None)

        if loss == CROSS_ENTROPY:
            if self.problem_type != CLASSIFICATION:
                raise ValidationError("cross_entropy requires a classification model (softmax last layer)")
            labels = np.asarray(y)
            if labels.ndim != 1 or labels.shape[0] != batch:
                raise ValidationError(f"labels must be a 1-axis array of length {batch}")
            n_classes = out.shape[1]
            if labels.min() < 0 or labels.max() >= n_classes:
                raise ValidationError(f"labels must lie in [0, {n_classes})")
            picked = out[np.arange(batch), labels]
            loss_value = float(-np.log(np.maximum(picked, 1e-300)).mean())
            # fused softmax + cross-entropy gradient, taken below the softmax layer
            grad = out.copy()
            grad[np.arange(batch), labels] -= 1.0
            grad /= batch
            steps = cache[:-1]
        elif loss == MEAN_SQUARED_ERROR:
            target = np.asarray(y, dtype=np.float64)
            if target.ndim == 1:
                target = target[:, None]
            if target.shape != out.shape:
                raise ValidationError(f"targets shape {target.shape} does not match outputs {out.shape}")
            diff = out - target
            with np.errstate(over="ignore"):  # divergence shows up as inf and is caught by fit
                loss_value = float(np.mean(diff * diff))
            grad = 2.0 * diff / diff.size
            steps = cache
        else:
            raise ValidationError(f"unknown loss {loss!r}")

        grads: list = [None] * len(self.layers)
        for idx in range(len(steps) - 1, -1, -1):
            layer, layer_in, extra = steps[idx]
            if isinstance(layer, Dense):
                grads[idx] = (grad.T @ layer_in, grad.sum(axis=0))
                grad = grad @ layer.weights
            elif isinstance(layer, Relu):
                grad = grad * (layer_in > 0.0)
            elif isinstance(layer, Softmax):
                shifted = layer_in - layer_in.max(axis=1, keepdims=True)
                e = np.exp(shifted)
                p = e / e.sum(axis=1, keepdims=True)
                grad = p * (grad - (grad * p).sum(axis=1, keepdims=True))
            elif isinstance(layer, Dropout):
                if extra is not None:
                    grad = grad * extra
        return loss_value, grads

    def fit(self, x, y, config: TrainConfig | None = None) -> list[float]:
        """Minibatch SGD; returns the per-epoch mean training loss.

        Dropout layers are always active during training, whatever the
        stochastic mode says.
        """
        config = config or TrainConfig()
        x = self._check_input(x)
        n = x.shape[0]
        if config.batch_size > n:
            raise ValidationError(f"batch_size {config.batch_size} exceeds dataset size {n}")
        y = np.asarray(y)
        if y.shape[0] != n:
            raise ValidationError(f"x has {n} rows but y has {y.shape[0]}")

        shuffle_rng = _stream_rng(config.seed, _SHUFFLE_STREAM)
        dropout_rng = _stream_rng(config.seed, _TRAIN_DROPOUT_STREAM)
        has_dropout = any(isinstance(l, Dropout) for l in self.layers)

        history: list[float] = []
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(n)
            total = 0.0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                loss_value, grads = self.loss_and_gradients(
                    x[idx], y[idx], config.loss,
                    dropout_rng=dropout_rng if has_dropout else None,
                )
                if not np.isfinite(loss_value):
                    raise TrainingDivergedError(
                        f"non-finite loss {loss_value} in epoch {epoch}; "
                        f"try a smaller learning_rate than {config.learning_rate}"
                    )
                for layer, grad in zip(self.layers, grads):
                    if grad is not None:
                        layer.weights -= config.learning_rate * grad[0]
                        layer.biases -= config.learning_rate * grad[1]
                total += loss_value * len(idx)
            history.append(total / n)
        return history

    # -- quantified prediction ----------------------------------------------

    def predict_quantified(self, x, quantifiers, num_samples: int = 32,
                           as_confidence: bool | None = None, batch_size: int = 32):
        """Predict with one or several quantifiers in a single call.

        Point-predictor quantifiers see one deterministic pass; sampling-based
        quantifiers see num_samples stochastic passes (dropout enabled for the
        duration, restored afterwards even on error). A single quantifier in
        gives a single QuantifiedResult out; a list gives a list in the same
        order. as_confidence converts scores per convert_score.
        """
        descriptors, single = resolve_quantifiers(quantifiers)
        x = self._check_input(x)
        if batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        for desc in descriptors:
            if desc.problem_type != self.problem_type:
                raise ValidationError(
                    f"quantifier {desc.canonical_name!r} expects a {desc.problem_type} model, "
                    f"this model is {self.problem_type}"
                )
        sbq = [d for d in descriptors if d.is_sampling_based]
        if sbq and num_samples < 2:
            raise InsufficientSamplesError(
                f"sampling-based quantifiers need num_samples >= 2, got {num_samples}"
            )

        single_outputs = None
        sampled_outputs = None
        self.stochastic_mode.enabled = False
        try:
            if any(not d.is_sampling_based for d in descriptors):
                single_outputs = self._forward_batched(x, batch_size)
            if sbq:
                self.stochastic_mode.enabled = True
                sampled_outputs = self._sampled_forward(x, num_samples, batch_size)
        finally:
            self.stochastic_mode.enabled = False

        results = []
        for desc in descriptors:
            outputs = sampled_outputs if desc.is_sampling_based else single_outputs
            results.append(convert_score(desc.func(outputs), as_confidence))
        return results[0] if single else results

    def _forward_batched(self, x: np.ndarray, batch_size: int) -> np.ndarray:
        chunks = [self.forward(x[i:i + batch_size]) for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(chunks, axis=0)

    def _sampled_forward(self, x: np.ndarray, num_samples: int, batch_size: int) -> np.ndarray:
        n = x.shape[0]
        rows = []
        for chunk in replicate_stream(x, num_samples, batch_size):
            rows.append(self.forward(chunk))
        flat = np.concatenate(rows, axis=0)
        return flat.reshape(n, num_samples, flat.shape[1])


def replicate_stream(x: np.ndarray, num_samples: int, batch_size: int):
    """Yield the input-major replicated row stream in chunks of <= batch_size rows.

    Row k of the virtual (N * num_samples)-row stream is input k // num_samples,
    so the samples of one input stay contiguous. Only one chunk is ever
    materialized at a time.
    """
    total = x.shape[0] * num_samples
    start = 0
    while start < total:
        stop = min(start + batch_size, total)
        yield x[np.arange(start, stop) // num_samples]
        start = stop


def build_sequential(layer_specs, seed: int, stochastic: bool = True) -> SequentialModel:
    """Assemble a model from layer specs, initializing any missing weights.

    Specs are deep-copied, so one spec list can build many independent models.
    Dense layers without explicit weights get Glorot-uniform init
    (uniform in +-sqrt(6 / (in + out))) and zero biases, drawn from per-layer
    streams of the given seed. With stochastic=True every dropout layer is
    bound to the new model's StochasticMode; with stochastic=False the model
    is "plain": dropout still applies during training but never at prediction.
    """
    layers = [copy.deepcopy(spec) for spec in layer_specs]
    if not layers:
        raise ModelConstructionError("a model needs at least one layer")
    mode = StochasticMode()
    width = None
    for index, layer in enumerate(layers):
        if isinstance(layer, Dense):
            if layer.in_dim is None:
                if width is None:
                    raise ModelConstructionError(
                        f"layer {index}: first dense layer must declare in_dim"
                    )
                layer.in_dim = width
            elif width is not None and layer.in_dim != width:
                raise ModelConstructionError(
                    f"layer {index}: dense in_dim {layer.in_dim} does not chain with preceding width {width}"
                )
            if layer.weights is None:
                rng = _stream_rng(seed, _INIT_STREAM, index)
                limit = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
                layer.weights = rng.uniform(-limit, limit, size=(layer.out_dim, layer.in_dim))
            if layer.biases is None:
                layer.biases = np.zeros(layer.out_dim)
            width = layer.out_dim
        elif isinstance(layer, Dropout):
            layer.mode = mode if stochastic else None
        elif not isinstance(layer, (Relu, Softmax)):
            raise ModelConstructionError(f"layer {index}: unsupported spec {type(layer).__name__}")
    problem = CLASSIFICATION if isinstance(layers[-1], Softmax) else REGRESSION
    return SequentialModel(layers, mode, seed, problem)


def stochastic_from_plain(model: SequentialModel) -> SequentialModel:
    """Rebind a plain model's dropout layers to a fresh StochasticMode.

    Weights are shared structurally (deep-copied), deterministic outputs are
    unchanged, and the returned model can serve sampling-based quantifiers.
    A model without any dropout layer is returned unchanged with a
    RuntimeWarning: sampling it would be degenerate.
    """
    if not any(isinstance(l, Dropout) for l in model.layers):
        warnings.warn(
            "model has no randomized layers; sampling-based quantifiers will see "
            "zero dispersion", RuntimeWarning, stacklevel=2,
        )
        return model
    layers = [copy.deepcopy(l) for l in model.layers]
    mode = StochasticMode()
    for layer in layers:
        if isinstance(layer, Dropout):
            layer.mode = mode
    return SequentialModel(layers, mode, model.rng_seed, model.problem_type)
