"""Desk-scale dataset provisioning: synthetic blobs, CSV/IDX files, sharding.

The synthetic generator draws one Gaussian blob per class around a
seed-derived prototype, giving a task that is learnable in seconds yet
sensitive to weight precision. External CSV and IDX files can stand in for
the synthetic data when real samples are available.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError, DatasetFormatError

#: per-class standard deviation of the synthetic blobs
CLASS_SPREAD = 0.15
#: prototypes are drawn uniformly from this box in every feature dimension
PROTO_LOW, PROTO_HIGH = 0.2, 0.8

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class Split(Enum):
    TRAIN = "train"
    TEST = "test"


class FileFormat(Enum):
    CSV = "csv"
    IDX = "idx"


@dataclass(frozen=True)
class Dataset:
    """Feature matrix in [0,1] with integer labels in [0, n_classes)."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: Split

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if features.ndim != 2:
            raise DatasetFormatError("features must be a 2-D matrix")
        if features.shape[0] != labels.shape[0]:
            raise DatasetFormatError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise DatasetFormatError(
                f"labels outside [0, {self.n_classes}): "
                f"[{labels.min()}, {labels.max()}]"
            )
        if features.size and (features.min() < 0.0 or features.max() > 1.0):
            raise DatasetFormatError("features must lie in [0, 1]")
        if self.split is Split.TRAIN:
            present = np.unique(labels)
            if present.size != self.n_classes:
                missing = sorted(set(range(self.n_classes)) - set(present.tolist()))
                raise DatasetFormatError(f"training split is missing classes {missing}")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ShardPlan:
    """client id -> indices into the training set; a near-equal partition."""

    assignments: dict[int, np.ndarray]

    def indices_for(self, client_id: int) -> np.ndarray:
        return self.assignments[client_id]

    @property
    def n_clients(self) -> int:
        return len(self.assignments)


def _balanced_counts(total: int, groups: int) -> list[int]:
    base, extra = divmod(total, groups)
    return [base + (1 if g < extra else 0) for g in range(groups)]


def generate_synthetic(seed: int, n_train: int, n_test: int, n_classes: int,
                       dim: int) -> tuple[Dataset, Dataset]:
    """Balanced Gaussian-blob classification data, fully determined by ``seed``."""
    if n_classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {n_classes}")
    if dim < n_classes:
        raise ConfigurationError(f"dim {dim} must be >= number of classes {n_classes}")
    rng = np.random.default_rng(seed)
    prototypes = rng.uniform(PROTO_LOW, PROTO_HIGH, size=(n_classes, dim))

    def draw(total: int, split: Split) -> Dataset:
        feats, labs = [], []
        for c, count in enumerate(_balanced_counts(total, n_classes)):
            samples = prototypes[c] + rng.normal(0.0, CLASS_SPREAD, size=(count, dim))
            feats.append(np.clip(samples, 0.0, 1.0))
            labs.append(np.full(count, c, dtype=np.int64))
        return Dataset(features=np.concatenate(feats), labels=np.concatenate(labs),
                       n_classes=n_classes, split=split)

    return draw(n_train, Split.TRAIN), draw(n_test, Split.TEST)


def shard_uniform(dataset: Dataset, n_clients: int, rng: np.random.Generator) -> ShardPlan:
    """Split a seed-determined permutation into near-equal contiguous blocks."""
    if n_clients < 1:
        raise ConfigurationError(f"need at least one client, got {n_clients}")
    if dataset.n_samples < n_clients:
        raise ConfigurationError(
            f"{dataset.n_samples} samples cannot cover {n_clients} clients"
        )
    perm = rng.permutation(dataset.n_samples)
    assignments = {}
    offset = 0
    for client_id, count in enumerate(_balanced_counts(dataset.n_samples, n_clients)):
        block = perm[offset:offset + count].copy()
        block.setflags(write=False)
        assignments[client_id] = block
        offset += count
    return ShardPlan(assignments=assignments)


# ---------------------------------------------------------------------------
# File ingestion: CSV (one sample per line, label last) and IDX
# ---------------------------------------------------------------------------

def load_csv(path, split: Split = Split.TRAIN) -> Dataset:
    """Comma-separated samples, features then an integer label per line.

    Feature values must already lie in [0, 1]; the class count is inferred
    as ``max(label) + 1``.
    """
    rows, labels = [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for line_no, record in enumerate(csv.reader(fh), start=1):
            if not record:
                continue
            if len(record) < 2:
                raise DatasetFormatError(f"{path}: line {line_no}: need features and a label")
            try:
                values = [float(v) for v in record[:-1]]
                label = int(record[-1])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: line {line_no}: {exc}") from exc
            if rows and len(values) != len(rows[0]):
                raise DatasetFormatError(
                    f"{path}: line {line_no}: {len(values)} features, expected {len(rows[0])}"
                )
            if label < 0:
                raise DatasetFormatError(f"{path}: line {line_no}: negative label {label}")
            rows.append(values)
            labels.append(label)
    if not rows:
        raise DatasetFormatError(f"{path}: no samples")
    return Dataset(features=np.asarray(rows), labels=np.asarray(labels),
                   n_classes=max(labels) + 1, split=split)


def save_csv(dataset: Dataset, path) -> None:
    """Write the dataset so :func:`load_csv` reproduces it exactly."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def _read_idx(path, expected_magic: int) -> tuple[tuple[int, ...], np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DatasetFormatError(f"{path}: truncated header")
    magic = int.from_bytes(raw[0:4], "big")
    if magic != expected_magic:
        raise DatasetFormatError(
            f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    n_dims = magic & 0xFF
    header_len = 4 + 4 * n_dims
    if len(raw) < header_len:
        raise DatasetFormatError(f"{path}: truncated at dimension list")
    dims = tuple(int.from_bytes(raw[4 + 4 * i:8 + 4 * i], "big") for i in range(n_dims))
    count = int(np.prod(dims)) if dims else 0
    if len(raw) != header_len + count:
        raise DatasetFormatError(
            f"{path}: payload is {len(raw) - header_len} bytes, header promises {count}"
        )
    data = np.frombuffer(raw, dtype=np.uint8, offset=header_len)
    return dims, data


def load_idx(images_path, labels_path, split: Split = Split.TRAIN) -> Dataset:
    """Big-endian IDX image/label pair; byte features are rescaled by 1/255."""
    img_dims, img_data = _read_idx(images_path, IDX_IMAGES_MAGIC)
    lab_dims, lab_data = _read_idx(labels_path, IDX_LABELS_MAGIC)
    n = img_dims[0]
    if lab_dims[0] != n:
        raise DatasetFormatError(
            f"{images_path} has {n} images but {labels_path} has {lab_dims[0]} labels"
        )
    features = img_data.reshape(n, -1).astype(np.float64) / 255.0
    labels = lab_data.astype(np.int64)
    return Dataset(features=features, labels=labels,
                   n_classes=int(labels.max()) + 1, split=split)


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write an IDX pair (features are scaled by 255 and stored as bytes)."""
    n, d = dataset.features.shape
    scaled = np.round(dataset.features * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(IDX_IMAGES_MAGIC.to_bytes(4, "big"))
        fh.write(n.to_bytes(4, "big"))
        fh.write(d.to_bytes(4, "big"))
        fh.write((1).to_bytes(4, "big"))
        fh.write(scaled.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(IDX_LABELS_MAGIC.to_bytes(4, "big"))
        fh.write(n.to_bytes(4, "big"))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def load_external(path, fmt: FileFormat, split: Split = Split.TRAIN) -> Dataset:
    """Load a dataset file by format.

    For IDX, ``path`` is the images file; the labels file is found by
    replacing ``images`` with ``labels`` and ``idx3`` with ``idx1`` in the
    name (the usual naming convention for IDX pairs).
    """
    if fmt is FileFormat.CSV:
        return load_csv(path, split=split)
    labels_path = str(path).replace("images", "labels").replace("idx3", "idx1")
    if labels_path == str(path):
        raise DatasetFormatError(
            f"cannot derive a labels file from {path}; use load_idx(images, labels)"
        )
    return load_idx(path, labels_path, split=split)
