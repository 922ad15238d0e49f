"""Datasets: IDX file I/O, synthetic class blobs, unique-label partitioning.

The partitioner models a fleet of devices where each client only ever sees
one class of data (one user's samples), which is the pathological non-IID
case for federated averaging. A warmup fraction can be carved out of every
client to build a small shared buffer for bootstrapping a global model.
"""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import (
    ConfigError,
    DataError,
    IdxConsistencyError,
    IdxFormatError,
    PartitionError,
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Train/test split with flat float32 rows in [0, 1] and int labels."""

    train_inputs: np.ndarray
    train_labels: np.ndarray
    test_inputs: np.ndarray
    test_labels: np.ndarray
    num_classes: int
    feature_shape: tuple[int, ...]

    def __post_init__(self):
        f = int(np.prod(self.feature_shape))
        for name, inputs, labels in (
            ("train", self.train_inputs, self.train_labels),
            ("test", self.test_inputs, self.test_labels),
        ):
            if inputs.ndim != 2 or inputs.shape[1] != f:
                raise DataError(
                    f"{name} inputs shape {inputs.shape} does not match "
                    f"feature_shape {self.feature_shape} ({f} values)"
                )
            if labels.shape != (inputs.shape[0],):
                raise DataError(
                    f"{name} has {inputs.shape[0]} rows but {labels.shape[0]} labels"
                )
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise DataError(
                    f"{name} labels outside [0, {self.num_classes}): "
                    f"range [{labels.min()}, {labels.max()}]"
                )
        present = np.unique(self.test_labels)
        if len(present) != self.num_classes:
            missing = sorted(set(range(self.num_classes)) - set(present.tolist()))
            raise DataError(f"test split is missing classes {missing}")


# ---------------------------------------------------------------------------
# IDX files


def _open_idx(path: str):
    # sniff the two-byte gzip magic rather than trusting the extension
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, n: int, path: str, offset: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise IdxFormatError(
            f"{path}: truncated at byte {offset + len(data)}, "
            f"expected {n} more bytes from offset {offset}"
        )
    return data


def load_idx(images_path: str, labels_path: str):
    """Read an IDX image/label file pair (gzipped or raw).

    Returns (inputs, labels): float32 rows scaled to [0, 1] by /255 and an
    int64 label vector. Raises on bad magics, truncation (with the byte
    offset), or image/label count mismatch.
    """
    with _open_idx(images_path) as fh:
        header = _read_exact(fh, 16, images_path, 0)
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(
                f"{images_path}: bad magic 0x{magic:08x}, "
                f"expected 0x{IDX_IMAGES_MAGIC:08x} for images"
            )
        raw = _read_exact(fh, count * rows * cols, images_path, 16)
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)
    with _open_idx(labels_path) as fh:
        header = _read_exact(fh, 8, labels_path, 0)
        magic, label_count = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(
                f"{labels_path}: bad magic 0x{magic:08x}, "
                f"expected 0x{IDX_LABELS_MAGIC:08x} for labels"
            )
        raw = _read_exact(fh, label_count, labels_path, 8)
    if label_count != count:
        raise IdxConsistencyError(
            f"{images_path} holds {count} images but {labels_path} "
            f"holds {label_count} labels"
        )
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    inputs = pixels.astype(np.float32) / np.float32(255)
    return inputs, labels


def write_idx_images(path: str, pixels: np.ndarray, compress: bool = False) -> None:
    """Write uint8 images (count, rows, cols) as an IDX file."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3:
        raise ConfigError(f"pixels must be (count, rows, cols), got shape {pixels.shape}")
    opener = gzip.open if compress else open
    with opener(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *pixels.shape))
        fh.write(pixels.tobytes())


def write_idx_labels(path: str, labels: np.ndarray, compress: bool = False) -> None:
    """Write uint8 labels (count,) as an IDX file."""
    labels = np.asarray(labels, dtype=np.uint8)
    if labels.ndim != 1:
        raise ConfigError(f"labels must be 1-d, got shape {labels.shape}")
    opener = gzip.open if compress else open
    with opener(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def load_idx_dataset(train_images: str, train_labels: str, test_images: str,
                     test_labels: str, num_classes: int | None = None,
                     feature_shape: tuple[int, ...] | None = None) -> Dataset:
    """Assemble a Dataset from two IDX pairs.

    num_classes defaults to max label + 1; feature_shape defaults to
    (rows, cols, 1) recovered from the image header.
    """
    with _open_idx(train_images) as fh:
        _, _, r, c = struct.unpack(">IIII", _read_exact(fh, 16, train_images, 0))
    tr_x, tr_y = load_idx(train_images, train_labels)
    te_x, te_y = load_idx(test_images, test_labels)
    if num_classes is None:
        num_classes = int(max(tr_y.max(), te_y.max())) + 1
    if feature_shape is None:
        feature_shape = (r, c, 1)
    return Dataset(tr_x, tr_y, te_x, te_y, num_classes, tuple(feature_shape))


# ---------------------------------------------------------------------------
# synthetic data


def generate_synthetic(num_classes: int, samples_per_class: int,
                       feature_shape: tuple[int, ...], class_separation: float,
                       seed: int) -> Dataset:
    """Gaussian class blobs rescaled to [0, 1], stratified 80/20 split.

    Class means are standard-normal draws scaled by class_separation; sample
    noise has unit variance. class_separation=0 makes every class identically
    distributed, so no classifier can beat chance on it.
    """
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    if samples_per_class < 2:
        raise ConfigError(f"need at least 2 samples per class, got {samples_per_class}")
    if class_separation < 0:
        raise ConfigError(f"class_separation must be non-negative, got {class_separation}")
    f = int(np.prod(feature_shape))
    gen = rng.stream(seed, rng.SYNTHETIC)
    means = gen.standard_normal((num_classes, f)) * class_separation
    x = means[:, None, :] + gen.standard_normal((num_classes, samples_per_class, f))
    lo, hi = x.min(), x.max()
    x = ((x - lo) / (hi - lo)).astype(np.float32)
    n_train = min(max(int(round(samples_per_class * 0.8)), 1), samples_per_class - 1)
    train_x = x[:, :n_train, :].reshape(-1, f)
    test_x = x[:, n_train:, :].reshape(-1, f)
    train_y = np.repeat(np.arange(num_classes, dtype=np.int64), n_train)
    test_y = np.repeat(np.arange(num_classes, dtype=np.int64), samples_per_class - n_train)
    return Dataset(train_x, train_y, test_x, test_y, num_classes, tuple(feature_shape))


# ---------------------------------------------------------------------------
# partitioning


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset across single-label clients."""

    num_clients: int
    min_samples: int
    max_samples: int
    warmup_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError(f"num_clients must be positive, got {self.num_clients}")
        if not (0 < self.min_samples <= self.max_samples):
            raise ConfigError(
                f"need 0 < min_samples <= max_samples, got "
                f"[{self.min_samples}, {self.max_samples}]"
            )
        if not (0 <= self.warmup_fraction < 1):
            raise ConfigError(
                f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class ClientPartition:
    """One client's slice of the train split: a single label's indices."""

    client_id: int
    label: int
    train_indices: np.ndarray
    warmup_indices: np.ndarray


def partition_unique_label(dataset: Dataset, spec: PartitionSpec) -> list[ClientPartition]:
    """Assign labels 0..K-1 to clients 0..K-1, one label per client.

    Per client, a target count is drawn from [min_samples, max_samples],
    capped by availability; that many indices are taken as a seeded-shuffle
    prefix of the label's pool. The first ceil(warmup_fraction * count) of
    the selection become warmup indices, the rest train indices; the two
    sets are disjoint by construction. Everything draws from one partition
    stream, so results do not depend on evaluation order.
    """
    k = spec.num_clients
    if k > dataset.num_classes:
        raise ConfigError(
            f"cannot give {k} clients unique labels from "
            f"{dataset.num_classes} classes"
        )
    gen = rng.stream(spec.seed, rng.PARTITION)
    clients = []
    for client_id in range(k):
        label = client_id
        pool = np.flatnonzero(dataset.train_labels == label)
        if pool.size < spec.min_samples:
            raise PartitionError(
                f"label {label} has {pool.size} train samples, "
                f"need at least {spec.min_samples}"
            )
        n_total = int(gen.integers(spec.min_samples, spec.max_samples + 1))
        n_total = min(n_total, pool.size)
        picked = pool[gen.permutation(pool.size)[:n_total]]
        n_warm = math.ceil(spec.warmup_fraction * n_total)
        warmup = np.sort(picked[:n_warm])
        train = np.sort(picked[n_warm:])
        clients.append(ClientPartition(client_id, label, train, warmup))
    return clients


def build_warmup_buffer(dataset: Dataset, partitions: list[ClientPartition]):
    """Pool every client's warmup indices (ascending client order).

    Returns (inputs, labels); empty arrays when no client shared anything.
    """
    idx_blocks = [p.warmup_indices for p in sorted(partitions, key=lambda p: p.client_id)]
    if not idx_blocks or sum(b.size for b in idx_blocks) == 0:
        f = int(np.prod(dataset.feature_shape))
        return (np.empty((0, f), dtype=np.float32), np.empty(0, dtype=np.int64))
    indices = np.concatenate(idx_blocks)
    return dataset.train_inputs[indices], dataset.train_labels[indices]


def source_label_split(dataset: Dataset, labels: tuple[int, ...]):
    """Train rows whose label is in `labels`, remapped to 0..len-1.

    Used for pretraining a feature extractor on classes disjoint from the
    task's own clients.
    """
    labels = tuple(sorted(set(int(l) for l in labels)))
    if not labels:
        raise ConfigError("pretrain label split is empty")
    bad = [l for l in labels if l < 0 or l >= dataset.num_classes]
    if bad:
        raise ConfigError(f"pretrain labels {bad} outside [0, {dataset.num_classes})")
    mask = np.isin(dataset.train_labels, labels)
    if not mask.any():
        raise PartitionError(f"no train samples carry labels {labels}")
    remap = {l: i for i, l in enumerate(labels)}
    inputs = dataset.train_inputs[mask]
    raw = dataset.train_labels[mask]
    mapped = np.array([remap[int(l)] for l in raw], dtype=np.int64)
    return inputs, mapped, len(labels)
