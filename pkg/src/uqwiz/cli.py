"""Command-line front end: train, predict, evaluate, benchmark.

Subcommands: train-stochastic, train-ensemble, predict, evaluate, benchmark.
--model auto-detects what it points at: a .uwm file is a single stochastic
model, a directory with an ensemble.json manifest is a lazy ensemble.
Reports are written as CSV (RFC-4180) or JSON (one top-level array) to
--output (stdout by default). Exit codes: 0 success, 1 runtime failure,
2 usage error. The UQWIZ_LOG env var (error|warn|info|debug) controls
diagnostics on standard error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .ensemble import (
    ContextHandler,
    DeviceAllocatorContext,
    DeviceSlot,
    DynamicGrowthContext,
    LazyEnsemble,
    NoneContext,
    PoolConfig,
    PoolStats,
)
from .errors import (
    DatasetError,
    EnsembleStateError,
    InsufficientSamplesError,
    PoolConfigError,
    UnknownQuantifierError,
    UqwizError,
)
from .metrics import evaluate_quantified
from .nnengine import Dense, Dropout, Relu, Softmax, TrainConfig, build_sequential
from .persist import CsvSchema, Dataset, generate_blobs, load_csv, load_model, read_manifest, save_model
from .quantifiers import resolve_quantifiers

logger = logging.getLogger("uqwiz")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(UqwizError):
    """Bad flag value or flag combination; maps to exit code 2."""


def _configure_logging():
    raw = os.environ.get("UQWIZ_LOG", "warn").lower()
    level = _LOG_LEVELS.get(raw)
    if level is None:
        level = logging.WARNING
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("uqwiz %(levelname)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(level)


# ---------------------------------------------------------------------------
# Flag value parsers
# ---------------------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def parse_context(text: str | None) -> ContextHandler | None:
    """none | dynamic | device:<id>=<capacity>[,<id>=<capacity>...]"""
    if text is None:
        return None
    if text == "none":
        return NoneContext()
    if text == "dynamic":
        return DynamicGrowthContext()
    if text.startswith("device:"):
        slots = []
        for part in text[len("device:"):].split(","):
            name, _, cap = part.partition("=")
            if not name or not cap.isdigit():
                raise UsageError(f"bad device slot {part!r}; expected <id>=<capacity>")
            slots.append(DeviceSlot(name, int(cap)))
        return DeviceAllocatorContext(slots)
    raise UsageError(f"unknown context {text!r}; expected none, dynamic or device:<id>=<cap>,...")


def parse_arch(text: str) -> tuple[list[int], float | None]:
    """--arch grammar: 'dense:<h1>,<h2>,... dropout:<p>' (dropout optional)."""
    hidden: list[int] | None = None
    rate: float | None = None
    for token in text.split():
        key, _, value = token.partition(":")
        if key == "dense":
            try:
                hidden = [int(h) for h in value.split(",")]
            except ValueError:
                raise UsageError(f"bad dense sizes {value!r}") from None
            if not hidden or any(h < 1 for h in hidden):
                raise UsageError(f"dense sizes must be positive integers, got {value!r}")
        elif key == "dropout":
            try:
                rate = float(value)
            except ValueError:
                raise UsageError(f"bad dropout rate {value!r}") from None
            if not 0.0 <= rate < 1.0:
                raise UsageError(f"dropout rate must be in [0, 1), got {rate}")
        else:
            raise UsageError(f"unknown arch token {token!r}")
    if hidden is None:
        raise UsageError("--arch must contain a dense:<sizes> token")
    return hidden, rate


def classifier_layers(in_dim: int, num_classes: int, hidden: list[int],
                      dropout_rate: float | None) -> list:
    """Dense+relu(+dropout) blocks per hidden size, then a softmax head."""
    layers: list = []
    width = in_dim
    for size in hidden:
        layers += [Dense(width, size), Relu()]
        if dropout_rate:
            layers.append(Dropout(dropout_rate))
        width = size
    layers += [Dense(width, num_classes), Softmax()]
    return layers


def resolve_dataset(spec: str | None, seed: int, require_label: bool = True) -> Dataset:
    if not spec:
        raise UsageError("--dataset is required (a CSV path or blobs:<N>,<C>,<spread>)")
    if spec.startswith("blobs:"):
        parts = spec[len("blobs:"):].split(",")
        if len(parts) != 3:
            raise UsageError(f"bad blobs spec {spec!r}; expected blobs:<N>,<C>,<spread>")
        try:
            num_points, num_classes, spread = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise UsageError(f"bad blobs spec {spec!r}") from None
        return generate_blobs(num_points, num_classes, spread, seed)
    return load_csv(spec, CsvSchema(require_label=require_label))


def load_predictor(model_arg: str | None, seed: int):
    """Return ('model', SequentialModel) or ('ensemble', LazyEnsemble)."""
    if not model_arg:
        raise UsageError("--model is required")
    path = Path(model_arg)
    if path.is_file():
        return "model", load_model(path, seed=seed)
    if path.is_dir():
        manifest = read_manifest(path)
        return "ensemble", LazyEnsemble(path, manifest["num_models"])
    raise FileNotFoundError(f"{path}: no such model file or ensemble directory")


# ---------------------------------------------------------------------------
# Report writing
# ---------------------------------------------------------------------------

def write_report(rows: list[dict], columns: list[str], fmt: str, output: str | None):
    if fmt == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
        text = buffer.getvalue()
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


def _cell(value, fmt: str):
    """Vectors become JSON lists or ';'-joined CSV cells; scalars pass through."""
    if isinstance(value, np.ndarray):
        floats = [float(v) for v in value]
        return floats if fmt == "json" else ";".join(str(v) for v in floats)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


# ---------------------------------------------------------------------------
# Training supplier (module-level: workers may receive it by pickling)
# ---------------------------------------------------------------------------

class TrainingSupplier:
    """Builds and trains one classifier per model_id with the derived seed."""

    def __init__(self, features, labels, num_classes, hidden, dropout_rate,
                 epochs, batch_size, learning_rate):
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels)
        self.num_classes = num_classes
        self.hidden = hidden
        self.dropout_rate = dropout_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate

    def __call__(self, model_id: int, seed: int):
        layers = classifier_layers(self.features.shape[1], self.num_classes,
                                   self.hidden, self.dropout_rate)
        model = build_sequential(layers, seed=seed)
        config = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                             learning_rate=self.learning_rate, seed=seed)
        history = model.fit(self.features, self.labels, config)
        return model, (history[-1] if history else None)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_train_stochastic(args) -> int:
    dataset = resolve_dataset(args.dataset, args.seed)
    if dataset.labels is None or dataset.num_classes is None:
        raise DatasetError("training needs a labeled classification dataset")
    hidden, rate = parse_arch(args.arch)
    layers = classifier_layers(dataset.features.shape[1], dataset.num_classes, hidden, rate)
    model = build_sequential(layers, seed=args.seed)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         learning_rate=args.lr, seed=args.seed)
    history = model.fit(dataset.features, dataset.labels, config)
    if not args.model:
        raise UsageError("--model is required (output path for the trained .uwm)")
    save_model(model, args.model)
    train_preds = model.forward(dataset.features).argmax(axis=1)
    print(f"final_loss={history[-1] if history else 'n/a'}")
    print(f"train_accuracy={float(np.mean(train_preds == dataset.labels))}")
    logger.info("saved model to %s", args.model)
    return 0


def cmd_train_ensemble(args) -> int:
    model_dir = Path(args.model_dir)
    if model_dir.exists() and any(model_dir.iterdir()):
        raise EnsembleStateError(f"{model_dir} is not empty; refusing to overwrite")
    dataset = resolve_dataset(args.dataset, args.seed)
    if dataset.labels is None or dataset.num_classes is None:
        raise DatasetError("training needs a labeled classification dataset")
    hidden, rate = parse_arch(args.arch)
    supplier = TrainingSupplier(dataset.features, dataset.labels, dataset.num_classes,
                                hidden, rate, args.epochs, args.batch_size, args.lr)
    pool = PoolConfig(num_processes=args.num_processes, base_seed=args.seed)
    context = parse_context(args.context)
    lazy = LazyEnsemble(model_dir, args.num_models)
    losses = lazy.create(supplier, pool, context)
    for model_id, loss in enumerate(losses):
        print(f"model_{model_id} final_loss={loss if loss is not None else 'n/a'}")
    return 0


def cmd_predict(args) -> int:
    kind, predictor = load_predictor(args.model, args.seed)
    dataset = resolve_dataset(args.dataset, args.seed, require_label=False)
    descriptors, _ = resolve_quantifiers(args.quantifier)
    if kind == "model":
        results = predictor.predict_quantified(
            dataset.features, descriptors, num_samples=args.num_samples,
            as_confidence=args.as_confidence)
    else:
        results = predictor.predict_quantified(
            dataset.features, descriptors, pool=PoolConfig(num_processes=args.num_processes),
            as_confidence=args.as_confidence)
    rows = []
    for index in range(len(dataset)):
        for desc, result in zip(descriptors, results):
            rows.append({
                "input_index": index,
                "prediction": _cell(result.predictions[index], args.format),
                "score": float(result.scores[index]),
                "score_kind": result.score_kind,
                "quantifier": desc.canonical_name,
            })
    write_report(rows, ["input_index", "prediction", "score", "score_kind", "quantifier"],
                 args.format, args.output)
    return 0


def cmd_evaluate(args) -> int:
    kind, predictor = load_predictor(args.model, args.seed)
    dataset = resolve_dataset(args.dataset, args.seed)
    if dataset.labels is None:
        raise DatasetError("evaluate needs a labeled dataset")
    descriptors, _ = resolve_quantifiers(args.quantifier)
    if kind == "model":
        results = predictor.predict_quantified(dataset.features, descriptors,
                                               num_samples=args.num_samples)
    else:
        results = predictor.predict_quantified(dataset.features, descriptors,
                                               pool=PoolConfig(num_processes=args.num_processes))
    names = [d.canonical_name for d in descriptors]
    rows = [
        {"quantifier": row.quantifier, "accuracy": row.accuracy,
         "auroc": row.auroc if row.auroc is not None else "n/a"}
        for row in evaluate_quantified(results, names, dataset.labels)
    ]
    write_report(rows, ["quantifier", "accuracy", "auroc"], args.format, args.output)
    return 0


def cmd_benchmark(args) -> int:
    cores = os.cpu_count() or 1
    if cores < 2:
        logger.warning("only %d core(s) available; benchmark speedups will be meaningless", cores)
    dataset = resolve_dataset(args.dataset, args.seed)
    if dataset.labels is None or dataset.num_classes is None:
        raise DatasetError("benchmark needs a labeled classification dataset")
    hidden, rate = parse_arch(args.arch)
    supplier = TrainingSupplier(dataset.features, dataset.labels, dataset.num_classes,
                                hidden, rate, args.epochs, args.batch_size, args.lr)
    try:
        process_counts = [int(p) for p in args.processes_list.split(",")]
    except ValueError:
        raise UsageError(f"bad --processes-list {args.processes_list!r}") from None
    if 0 not in process_counts:
        process_counts.insert(0, 0)

    rows = []
    baseline = None
    for k in process_counts:
        context = NoneContext() if k == 0 else (parse_context(args.context) or DynamicGrowthContext())
        stats = PoolStats()
        with tempfile.TemporaryDirectory(prefix="uqwiz-bench-") as tmp:
            lazy = LazyEnsemble(Path(tmp) / "ensemble", args.num_models)
            started = time.perf_counter()
            lazy.create(supplier, PoolConfig(num_processes=k, base_seed=args.seed), context, stats)
            wall = time.perf_counter() - started
        occupancy = stats.max_slot_occupancy() or {"main": 1}
        rows.append({
            "num_processes": k,
            "context": "none" if k == 0 else (args.context or "dynamic").split(":")[0],
            "wall_clock_seconds": round(wall, 4),
            "peak_concurrent_models": stats.peak_in_memory_models,
            "per_slot_occupancy": occupancy if args.format == "json"
                                   else ";".join(f"{d}={c}" for d, c in sorted(occupancy.items())),
        })
        if k == 0:
            baseline = wall
        elif baseline:
            reduction = 100.0 * (1.0 - wall / baseline)
            print(f"num_processes={k}: {reduction:.1f}% wall-clock reduction vs baseline",
                  file=sys.stderr)
    write_report(rows, ["num_processes", "context", "wall_clock_seconds",
                        "peak_concurrent_models", "per_slot_occupancy"],
                 args.format, args.output)
    return 0


# ---------------------------------------------------------------------------
# Parser assembly and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uqwiz",
        description="Train, quantify and benchmark uncertainty-aware feed-forward networks.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--dataset", help="CSV path or blobs:<N>,<C>,<spread>")
    common.add_argument("--output", help="report destination (default stdout)")

    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--arch", required=True,
                       help="architecture, e.g. 'dense:16 dropout:0.1' or 'dense:32,16'")
    train.add_argument("--epochs", type=int, default=20)
    train.add_argument("--batch-size", type=int, default=32)
    train.add_argument("--lr", type=float, default=0.5, help="SGD learning rate")

    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("train-stochastic", parents=[common, train],
                       help="train a dropout-capable model and save it as .uwm")
    p.add_argument("--model", help="output path for the trained model")
    p.set_defaults(func=cmd_train_stochastic)

    p = sub.add_parser("train-ensemble", parents=[common, train],
                       help="train a lazy ensemble into a directory")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--num-models", type=int, required=True)
    p.add_argument("--num-processes", type=int, default=0)
    p.add_argument("--context", help="none | dynamic | device:<id>=<cap>,...")
    p.set_defaults(func=cmd_train_ensemble)

    p = sub.add_parser("predict", parents=[common],
                       help="emit quantified predictions for a model or ensemble")
    p.add_argument("--model", help=".uwm file or ensemble directory")
    p.add_argument("--quantifier", action="append", required=True,
                   help="quantifier alias; repeat for several (order preserved)")
    p.add_argument("--num-samples", type=int, default=32)
    p.add_argument("--num-processes", type=int, default=0)
    p.add_argument("--as-confidence", type=_parse_bool, default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score quantifiers as misprediction detectors (AUROC)")
    p.add_argument("--model", help=".uwm file or ensemble directory")
    p.add_argument("--quantifier", action="append", required=True)
    p.add_argument("--num-samples", type=int, default=32)
    p.add_argument("--num-processes", type=int, default=0)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", parents=[common, train],
                       help="compare sequential vs parallel ensemble training")
    p.add_argument("--num-models", type=int, default=8)
    p.add_argument("--processes-list", default="0,2",
                   help="comma-separated worker counts; 0 baseline is always included")
    p.add_argument("--context", help="context for the parallel rows (default dynamic)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, UnknownQuantifierError, PoolConfigError, InsufficientSamplesError) as error:
        print(f"uqwiz: {error}", file=sys.stderr)
        return 2
    except (UqwizError, FileNotFoundError) as error:
        print(f"uqwiz: {error}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
