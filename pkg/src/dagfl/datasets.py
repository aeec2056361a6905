"""Data shards: IDX file loading, synthetic clusters, non-IID partitioning,
and the label-corruption transforms used by adversarial nodes."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

SHARD_FORMAT = "dagfl-shard v1"

# fraction of synthesized samples that become the training split
TRAIN_SPLIT = 0.8


@dataclass(frozen=True)
class DataShard:
    features: np.ndarray  # (n, dim) float64
    labels: np.ndarray  # (n,) int64
    classes: int
    role: str  # "train" or "test"

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if labels.ndim != 1 or len(labels) != len(features):
            raise ValueError("labels must be 1-d and match the feature count")
        if self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.classes):
            raise ValueError("labels must lie in [0, classes)")
        if self.role not in ("train", "test"):
            raise ValueError(f"role must be 'train' or 'test', got {self.role!r}")
        features = features.copy()
        labels = labels.copy()
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, indices: np.ndarray, role: str | None = None) -> "DataShard":
        return DataShard(
            self.features[indices], self.labels[indices], self.classes,
            role if role is not None else self.role,
        )


def load_idx(images_path: str, labels_path: str, classes: int = 10,
             role: str = "train") -> DataShard:
    """Read an IDX image/label file pair into a shard, pixels scaled to [0, 1]."""
    with open(images_path, "rb") as f:
        header = f.read(16)
        if len(header) < 16:
            raise ValueError(f"{images_path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">llll", header)
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"{images_path}: bad IDX magic {magic}")
        payload = f.read()
    if len(payload) < count * rows * cols:
        raise ValueError(f"{images_path}: truncated IDX payload")
    pixels = np.frombuffer(payload, dtype=np.uint8, count=count * rows * cols)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0

    with open(labels_path, "rb") as f:
        header = f.read(8)
        if len(header) < 8:
            raise ValueError(f"{labels_path}: truncated IDX header")
        magic, n_labels = struct.unpack(">ll", header)
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"{labels_path}: bad IDX magic {magic}")
        raw = f.read()
    if len(raw) < n_labels:
        raise ValueError(f"{labels_path}: truncated IDX payload")
    labels = np.frombuffer(raw, dtype=np.uint8, count=n_labels).astype(np.int64)
    if n_labels != count:
        raise ValueError(
            f"image/label count mismatch: {count} images, {n_labels} labels"
        )
    return DataShard(features, labels, classes, role)


def synthesize(classes: int, per_class: int, dim: int, spread: float,
               seed: int) -> tuple[DataShard, DataShard]:
    """Gaussian class clusters with unit-normal means; returns (train, test).

    Class c's samples are mean_c + spread * N(0, I). The pooled set is
    shuffled and split 80/20.
    """
    if classes < 2:
        raise ValueError(f"classes must be >= 2, got {classes}")
    if per_class < 2:
        raise ValueError(f"per_class must be >= 2, got {per_class}")
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if spread <= 0:
        raise ValueError(f"spread must be > 0, got {spread}")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, 1.0, size=(classes, dim))
    features = np.concatenate(
        [means[c] + spread * rng.normal(0.0, 1.0, size=(per_class, dim))
         for c in range(classes)]
    )
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    order = rng.permutation(len(labels))
    features, labels = features[order], labels[order]
    n_train = int(TRAIN_SPLIT * len(labels))
    train = DataShard(features[:n_train], labels[:n_train], classes, "train")
    test = DataShard(features[n_train:], labels[n_train:], classes, "test")
    return train, test


def partition_noniid(train: DataShard, n_nodes: int, seed: int) -> list[DataShard]:
    """Skewed per-node shards: two label-sorted slices plus a mixed remainder.

    A seeded permutation of the training set is split at floor(2n/3). The
    first part is stable-sorted by label and cut into 2 * n_nodes contiguous
    shards (remainder samples join the last shard); each node receives two of
    those shards in permuted order. The rest of the samples are dealt
    round-robin in permuted order, one per node in turn.
    """
    n = len(train)
    if n_nodes < 2:
        raise ValueError(f"n_nodes must be >= 2, got {n_nodes}")
    sorted_count = (2 * n) // 3
    if sorted_count < 2 * n_nodes:
        raise ValueError(
            f"too few samples ({n}) to cut {2 * n_nodes} label-sorted shards"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    sorted_part = perm[:sorted_count]
    mixed_part = perm[sorted_count:]
    # stable sort keeps the permuted order within each label
    sorted_part = sorted_part[np.argsort(train.labels[sorted_part], kind="stable")]

    shard_size = sorted_count // (2 * n_nodes)
    shards = [
        sorted_part[i * shard_size : (i + 1) * shard_size]
        for i in range(2 * n_nodes)
    ]
    shards[-1] = sorted_part[(2 * n_nodes - 1) * shard_size :]
    shard_order = rng.permutation(2 * n_nodes)

    per_node = [
        [shards[shard_order[2 * i]], shards[shard_order[2 * i + 1]]]
        for i in range(n_nodes)
    ]
    for j, sample in enumerate(mixed_part):
        per_node[j % n_nodes].append(np.array([sample]))
    return [train.take(np.concatenate(parts)) for parts in per_node]


def split_holdout(shard: DataShard, fraction: float,
                  rng: np.random.Generator) -> tuple[DataShard, DataShard]:
    """Split off a validation slice; returns (train_part, holdout)."""
    n = len(shard)
    if n < 2:
        raise ValueError("shard too small to split")
    if not (0 < fraction < 1):
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    n_val = min(max(1, int(round(fraction * n))), n - 1)
    perm = rng.permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return shard.take(train_idx), shard.take(val_idx)


@dataclass(frozen=True)
class Trigger:
    """A fixed feature-space pattern stamped onto backdoored samples."""

    indices: tuple[int, ...]
    value: float
    mode: str  # "add" or "set"

    def __post_init__(self):
        if self.mode not in ("add", "set"):
            raise ValueError(f"mode must be 'add' or 'set', got {self.mode!r}")
        if not self.indices:
            raise ValueError("trigger needs at least one feature index")


def offset_trigger(dim: int, width: int = 5, value: float = 3.0) -> Trigger:
    """Additive offset on the first `width` features (synthetic data)."""
    return Trigger(tuple(range(min(width, dim))), value, "add")


def corner_square_trigger(side: int, width: int = 5, value: float = 1.0) -> Trigger:
    """Set a width x width corner of a side x side image to a constant."""
    if width > side:
        raise ValueError(f"trigger width {width} exceeds image side {side}")
    indices = tuple(r * side + c for r in range(width) for c in range(width))
    return Trigger(indices, value, "set")


def apply_trigger(features: np.ndarray, trigger: Trigger) -> np.ndarray:
    out = np.array(features, dtype=np.float64)
    idx = list(trigger.indices)
    if max(idx) >= out.shape[1]:
        raise ValueError("trigger index out of feature range")
    if trigger.mode == "add":
        out[:, idx] += trigger.value
    else:
        out[:, idx] = trigger.value
    return out


def poison_shard(shard: DataShard, fraction: float,
                 rng: np.random.Generator) -> DataShard:
    """Replace the labels of a random `fraction` of the shard with uniform noise."""
    n = len(shard)
    count = int(round(fraction * n))
    if count == 0:
        return shard
    chosen = rng.permutation(n)[:count]
    labels = shard.labels.copy()
    labels[chosen] = rng.integers(0, shard.classes, size=count)
    return DataShard(shard.features, labels, shard.classes, shard.role)


def backdoor_shard(shard: DataShard, trigger: Trigger, fraction: float,
                   rng: np.random.Generator) -> DataShard:
    """Stamp the trigger on a random `fraction` and retarget labels to (y+1) mod C."""
    n = len(shard)
    count = int(round(fraction * n))
    if count == 0:
        return shard
    chosen = rng.permutation(n)[:count]
    features = shard.features.copy()
    features[chosen] = apply_trigger(shard.features[chosen], trigger)
    labels = shard.labels.copy()
    labels[chosen] = (labels[chosen] + 1) % shard.classes
    return DataShard(features, labels, shard.classes, shard.role)


def save_shard(shard: DataShard, path: str) -> None:
    with open(path, "w") as f:
        f.write(f"{SHARD_FORMAT} {len(shard)} {shard.features.shape[1]} "
                f"{shard.classes} {shard.role}\n")
        for row, label in zip(shard.features, shard.labels):
            f.write(str(int(label)) + " " + " ".join(repr(float(x)) for x in row) + "\n")


def load_shard(path: str) -> DataShard:
    with open(path) as f:
        header = f.readline().split()
        if header[:2] != SHARD_FORMAT.split():
            raise ValueError(f"unrecognized shard file header in {path}")
        count, dim = int(header[2]), int(header[3])
        classes, role = int(header[4]), header[5]
        features = np.empty((count, dim))
        labels = np.empty(count, dtype=np.int64)
        for i in range(count):
            parts = f.readline().split()
            labels[i] = int(parts[0])
            features[i] = [float(x) for x in parts[1:]]
    return DataShard(features, labels, classes, role)
