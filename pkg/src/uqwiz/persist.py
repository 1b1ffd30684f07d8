"""Model weight files, the ensemble manifest, and dataset ingestion.

Weight files (.uwm) are a fixed little-endian layout:

    magic   8 bytes ASCII "UWMODEL1"
    header  u32 layer count, then one record per layer:
              u8 kind tag (0 dense, 1 relu, 2 softmax, 3 dropout)
              dense: u32 in_dim, u32 out_dim     dropout: f64 rate
    payload per dense layer: row-major f64 weights, then f64 biases
    trailer u64 FNV-1a checksum over header + payload

Everything is f64 on disk and in memory, so save/load round-trips reproduce
forward behavior bit-exactly and fixture files load identically on any
platform. Writes go through a temp file + rename, so a crash mid-write never
leaves a half-written model behind.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ChecksumError,
    DatasetError,
    ModelFormatError,
    TruncatedFileError,
    ValidationError,
)
from .nnengine import Dense, Dropout, Relu, Softmax, SequentialModel, build_sequential

MAGIC = b"UWMODEL1"
MODEL_SUFFIX = ".uwm"
MANIFEST_NAME = "ensemble.json"

_TAG_DENSE, _TAG_RELU, _TAG_SOFTMAX, _TAG_DROPOUT = 0, 1, 2, 3

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a(data: bytes) -> int:
    """64-bit FNV-1a; dependency-free corruption check, not a security hash."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return h


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def _encode_model(model: SequentialModel) -> bytes:
    header = bytearray(struct.pack("<I", len(model.layers)))
    payload = bytearray()
    for layer in model.layers:
        if isinstance(layer, Dense):
            header += struct.pack("<BII", _TAG_DENSE, layer.in_dim, layer.out_dim)
            payload += np.ascontiguousarray(layer.weights, dtype="<f8").tobytes()
            payload += np.ascontiguousarray(layer.biases, dtype="<f8").tobytes()
        elif isinstance(layer, Relu):
            header += struct.pack("<B", _TAG_RELU)
        elif isinstance(layer, Softmax):
            header += struct.pack("<B", _TAG_SOFTMAX)
        elif isinstance(layer, Dropout):
            header += struct.pack("<Bd", _TAG_DROPOUT, layer.rate)
        else:
            raise ModelFormatError(f"cannot serialize layer type {type(layer).__name__}")
    body = bytes(header) + bytes(payload)
    return MAGIC + body + struct.pack("<Q", fnv1a(body))


def save_model(model: SequentialModel, path) -> None:
    """Write a model to path atomically (temp file in the same dir, then rename)."""
    path = Path(path)
    blob = _encode_model(model)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


class _Cursor:
    """Bounds-checked reader over the file bytes."""

    def __init__(self, data: bytes, offset: int):
        self.data = data
        self.offset = offset

    def take(self, count: int, what: str) -> bytes:
        if self.offset + count > len(self.data):
            raise TruncatedFileError(f"file ends inside {what}")
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def f64(self, what: str) -> float:
        return struct.unpack("<d", self.take(8, what))[0]


def load_model(path, seed: int = 0) -> SequentialModel:
    """Read a .uwm file back into a stochastic-capable model.

    The file stores forward behavior only; the given seed becomes the loaded
    model's sampling seed. Raises TruncatedFileError, ModelFormatError or
    ChecksumError depending on what is wrong with the file.
    """
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC):
        raise TruncatedFileError(f"{path}: file shorter than the magic number")
    if data[:len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: bad magic {data[:len(MAGIC)]!r}")

    cur = _Cursor(data, len(MAGIC))
    layer_count = cur.u32("layer count")
    specs: list[tuple] = []
    payload_len = 0
    for i in range(layer_count):
        tag = cur.u8(f"layer {i} tag")
        if tag == _TAG_DENSE:
            in_dim = cur.u32(f"layer {i} in_dim")
            out_dim = cur.u32(f"layer {i} out_dim")
            if in_dim < 1 or out_dim < 1:
                raise ModelFormatError(f"{path}: layer {i} declares non-positive dims")
            specs.append((_TAG_DENSE, in_dim, out_dim))
            payload_len += 8 * (in_dim * out_dim + out_dim)
        elif tag in (_TAG_RELU, _TAG_SOFTMAX):
            specs.append((tag,))
        elif tag == _TAG_DROPOUT:
            specs.append((_TAG_DROPOUT, cur.f64(f"layer {i} rate")))
        else:
            raise ModelFormatError(f"{path}: unknown layer tag {tag} at layer {i}")

    header_end = cur.offset
    remaining = len(data) - header_end
    if remaining < payload_len + 8:
        raise TruncatedFileError(f"{path}: payload or checksum missing")
    if remaining > payload_len + 8:
        raise ModelFormatError(f"{path}: {remaining - payload_len - 8} trailing bytes")

    stored = struct.unpack("<Q", data[-8:])[0]
    actual = fnv1a(data[len(MAGIC):-8])
    if stored != actual:
        raise ChecksumError(f"{path}: checksum {actual:#018x} != stored {stored:#018x}")

    layers: list = []
    for spec in specs:
        if spec[0] == _TAG_DENSE:
            _, in_dim, out_dim = spec
            w = np.frombuffer(cur.take(8 * in_dim * out_dim, "weights"), dtype="<f8")
            b = np.frombuffer(cur.take(8 * out_dim, "biases"), dtype="<f8")
            layers.append(Dense(in_dim, out_dim, w.reshape(out_dim, in_dim).copy(), b.copy()))
        elif spec[0] == _TAG_RELU:
            layers.append(Relu())
        elif spec[0] == _TAG_SOFTMAX:
            layers.append(Softmax())
        else:
            layers.append(Dropout(spec[1]))
    return build_sequential(layers, seed=seed)


# ---------------------------------------------------------------------------
# Ensemble manifest
# ---------------------------------------------------------------------------

def write_manifest(directory, num_models: int, base_seed: int) -> None:
    manifest = {"version": 1, "num_models": int(num_models), "base_seed": int(base_seed)}
    Path(directory, MANIFEST_NAME).write_text(json.dumps(manifest), encoding="utf-8")


def read_manifest(directory) -> dict:
    path = Path(directory, MANIFEST_NAME)
    if not path.is_file():
        raise DatasetError(f"no {MANIFEST_NAME} in {directory}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("version") != 1:
        raise ModelFormatError(f"{path}: unsupported manifest version {manifest.get('version')!r}")
    return manifest


def model_path(directory, model_id: int) -> Path:
    return Path(directory, f"model_{model_id}{MODEL_SUFFIX}")


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Feature matrix plus optional labels (class indices or regression targets)."""

    features: np.ndarray
    labels: np.ndarray | None = None
    num_classes: int | None = None
    output_dim: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValidationError(f"features must be 2-axis, got shape {self.features.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape[0] != self.features.shape[0]:
                raise ValidationError(
                    f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
                )
            if self.num_classes is not None and self.labels.size:
                if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
                    raise ValidationError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]


def generate_blobs(num_points: int, num_classes: int, spread: float, seed: int) -> Dataset:
    """Gaussian clusters around seeded random 2-D centers.

    Class counts are balanced within +-1 and the row order is shuffled, all
    deterministically under the seed.
    """
    if num_classes < 2:
        raise ValidationError(f"num_classes must be >= 2, got {num_classes}")
    if num_points < num_classes:
        raise ValidationError("need at least one point per class")
    if spread <= 0:
        raise ValidationError(f"spread must be positive, got {spread}")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-10.0, 10.0, size=(num_classes, 2))
    base, extra = divmod(num_points, num_classes)
    feature_parts, label_parts = [], []
    for c in range(num_classes):
        count = base + (1 if c < extra else 0)
        feature_parts.append(centers[c] + rng.normal(0.0, spread, size=(count, 2)))
        label_parts.append(np.full(count, c, dtype=np.int64))
    features = np.concatenate(feature_parts)
    labels = np.concatenate(label_parts)
    order = rng.permutation(num_points)
    return Dataset(features[order], labels[order], num_classes=num_classes)


def split_dataset(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled train/test split preserving metadata."""
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    test_idx, train_idx = order[:n_test], order[n_test:]

    def _take(idx):
        labels = dataset.labels[idx] if dataset.labels is not None else None
        return Dataset(dataset.features[idx], labels,
                       num_classes=dataset.num_classes, output_dim=dataset.output_dim)

    return _take(train_idx), _take(test_idx)


@dataclass
class CsvSchema:
    """Comma-separated, header row required, cells parsed as f64.

    When the final column's header equals label_column it is read as integer
    class labels; require_label=False allows unlabeled feature-only files.
    """

    delimiter: str = ","
    label_column: str = "label"
    require_label: bool = True


def load_csv(path, schema: CsvSchema | None = None) -> Dataset:
    """Load a CSV per the schema; row order is preserved.

    Parse errors name the offending data row and column (both 1-based).
    """
    schema = schema or CsvSchema()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: missing header row") from None
        has_label = bool(header) and header[-1] == schema.label_column
        if schema.require_label and not has_label:
            raise DatasetError(
                f"{path}: final column must be {schema.label_column!r}, got {header[-1] if header else 'nothing'!r}"
            )
        width = len(header)
        rows = []
        for row_num, row in enumerate(reader, start=1):
            if len(row) != width:
                raise DatasetError(f"{path}: row {row_num} has {len(row)} cells, expected {width}")
            parsed = []
            for col_num, cell in enumerate(row, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DatasetError(
                        f"{path}: cannot parse cell {cell!r} at row {row_num}, column {col_num}"
                    ) from None
            rows.append(parsed)

    values = np.asarray(rows, dtype=np.float64) if rows else np.empty((0, width))
    if not has_label:
        return Dataset(values)
    features, raw_labels = values[:, :-1], values[:, -1]
    if raw_labels.size and np.any(raw_labels != np.round(raw_labels)):
        bad = int(np.argmax(raw_labels != np.round(raw_labels))) + 1
        raise DatasetError(f"{path}: label at row {bad} is not an integer")
    labels = raw_labels.astype(np.int64)
    if labels.size and labels.min() < 0:
        raise DatasetError(f"{path}: labels must be non-negative")
    num_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(features, labels, num_classes=num_classes)
