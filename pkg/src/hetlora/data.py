"""Synthetic blobs, label-skewed client partitions, 8:1:1 splits, CSV I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ConfigError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def classes(self) -> set[int]:
        return set(np.unique(self.labels).tolist())


@dataclass
class PartitionPlan:
    client_classes: list[tuple[int, ...]]
    client_indices: list[np.ndarray]


def class_means(num_classes: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian class centers rescaled so the closest pair sits at ``separation``."""
    means = rng.normal(size=(num_classes, dim))
    if num_classes == 1:
        return means
    diff = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    closest = dist[~np.eye(num_classes, dtype=bool)].min()
    if closest == 0.0:
        raise ConfigError("degenerate class means; increase dim")
    return means * (separation / closest)


def generate_synthetic(num_classes: int, dim: int, per_class: int, separation: float,
                       rng: np.random.Generator) -> Dataset:
    if min(num_classes, dim, per_class) < 1:
        raise ConfigError("num_classes, dim and per_class must all be >= 1")
    if not separation > 0:
        raise ConfigError(f"separation must be positive, got {separation}")
    means = class_means(num_classes, dim, separation, rng)
    labels = np.repeat(np.arange(num_classes), per_class)
    features = means[labels] + rng.normal(size=(labels.size, dim))
    return Dataset(features, labels, num_classes)


def partition_noniid(dataset: Dataset, n_clients: int, classes_per_client: int,
                     rng: np.random.Generator, max_tries: int = 1000) -> PartitionPlan:
    """Give each client ``classes_per_client`` random classes and share each class evenly.

    When the clients have enough class slots to cover every class, draws
    leaving some class without a holder are redrawn.
    """
    c = dataset.num_classes
    if not 1 <= classes_per_client <= c:
        raise ConfigError(f"classes_per_client must lie in [1, {c}], got {classes_per_client}")
    if n_clients < 1:
        raise ConfigError("need at least one client")
    need_cover = n_clients * classes_per_client >= c
    for _ in range(max_tries):
        assigned = [tuple(sorted(rng.choice(c, size=classes_per_client, replace=False).tolist()))
                    for _ in range(n_clients)]
        holders: dict[int, list[int]] = {k: [] for k in range(c)}
        for client, classes in enumerate(assigned):
            for cls in classes:
                holders[cls].append(client)
        if need_cover and any(not h for h in holders.values()):
            continue
        buckets: list[list[int]] = [[] for _ in range(n_clients)]
        for cls in range(c):
            if not holders[cls]:
                continue
            members = np.flatnonzero(dataset.labels == cls)
            members = members[rng.permutation(members.size)]
            for j, idx in enumerate(members):
                buckets[holders[cls][j % len(holders[cls])]].append(int(idx))
        starved = [k for k, b in enumerate(buckets) if len(b) < classes_per_client]
        if starved:
            raise ConfigError(f"clients {starved} received fewer than {classes_per_client} samples")
        return PartitionPlan(assigned, [np.array(sorted(b), dtype=np.int64) for b in buckets])
    raise ConfigError(f"no class assignment covered all {c} classes in {max_tries} draws")


def split_sizes(n: int) -> tuple[int, int, int]:
    """Largest-remainder apportionment of ``n`` in 8:1:1; ties favour test, then val.

    Each size is within one sample of its exact share, e.g. 95 -> (76, 9, 10).
    """
    parts = [8, 1, 1]
    sizes = [p * n // 10 for p in parts]
    remainders = [p * n % 10 for p in parts]
    for i in sorted(range(3), key=lambda i: (-remainders[i], -i))[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes[0], sizes[1], sizes[2]


def split_811(indices, labels, rng: np.random.Generator, client_id: int | None = None):
    """Stratified train/val/test split of one client's sample indices.

    Samples are laid out so each class is spread evenly along the sequence;
    train takes the head, val the middle, test the tail. Every class present
    gets at least one training sample.
    """
    indices = np.asarray(indices, dtype=np.int64)
    n = indices.size
    if n < 10:
        who = f"client {client_id}" if client_id is not None else "client"
        raise ConfigError(f"{who} has {n} samples; at least 10 needed for an 8:1:1 split")
    labels = np.asarray(labels)[indices]
    keys = np.empty(n)
    for cls in np.unique(labels):
        pos = np.flatnonzero(labels == cls)
        pos = pos[rng.permutation(pos.size)]
        keys[pos] = (np.arange(pos.size) + 0.5) / pos.size
    order = indices[np.lexsort((labels, keys))]
    n_train, n_val, _ = split_sizes(n)
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def write_csv_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        for y, row in zip(dataset.labels, dataset.features):
            fh.write(",".join([str(int(y))] + [repr(float(v)) for v in row]) + "\n")


def load_csv_dataset(path) -> Dataset:
    path = Path(path)
    errors, labels, rows = [], [], []
    dim = None
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            try:
                y = int(rec[0])
                if y < 0:
                    raise ValueError("negative label")
                feats = [float(f) for f in rec[1:]]
            except ValueError as exc:
                errors.append(f"{path}:{lineno}: {exc}")
                continue
            if not feats:
                errors.append(f"{path}:{lineno}: no feature values")
                continue
            if dim is None:
                dim = len(feats)
            elif len(feats) != dim:
                errors.append(f"{path}:{lineno}: expected {dim} features, got {len(feats)}")
                continue
            labels.append(y)
            rows.append(feats)
    if errors:
        raise ConfigError(errors)
    if not rows:
        raise ConfigError(f"{path}: empty dataset")
    labels_arr = np.array(labels, dtype=np.int64)
    return Dataset(np.array(rows, dtype=np.float64), labels_arr, int(labels_arr.max()) + 1)
