"""Datasets with controllable label ambiguity and the shard partitioner.

The partitioner follows the usual non-IID recipe for MNIST-style federated
benchmarks: sort by class, cut into contiguous shards, deal shuffled shards
to clients.  Clean and ambiguous rows are sharded separately so each client
can be handed a chosen mix of the two.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .idx import load_mnist_arrays
from .nn import Batch


@dataclass(frozen=True, eq=False)
class LabeledPool:
    features: np.ndarray
    labels: np.ndarray
    ambiguous_mask: np.ndarray
    num_classes: int
    # class each row was drawn from, before any label flip; shards are cut by it
    source_labels: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.labels)
        if self.source_labels is None:
            object.__setattr__(self, "source_labels", self.labels)
        if self.features.shape[0] != n or self.ambiguous_mask.shape != (n,) \
                or self.source_labels.shape != (n,):
            raise DomainError("features, labels, source_labels and ambiguous_mask must align")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DomainError("labels outside [0, num_classes)")

    def __len__(self):
        return len(self.labels)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ShardSpec:
    """Clean and ambiguous shard counts per client."""

    clean: tuple[int, ...]
    ambiguous: tuple[int, ...]
    shard_size: int = 60

    def __post_init__(self):
        object.__setattr__(self, "clean", tuple(int(c) for c in self.clean))
        object.__setattr__(self, "ambiguous", tuple(int(a) for a in self.ambiguous))
        if len(self.clean) != len(self.ambiguous) or not self.clean:
            raise ConfigError("clean and ambiguous shard lists must be non-empty and equally long")
        if min(self.clean + self.ambiguous) < 0:
            raise ConfigError("shard counts must be >= 0")
        if self.shard_size < 1:
            raise ConfigError("shard_size must be >= 1")
        if any(c + a == 0 for c, a in zip(self.clean, self.ambiguous)):
            raise ConfigError("every client needs at least one shard")

    @property
    def num_clients(self) -> int:
        return len(self.clean)

    def client_shards(self, i: int) -> int:
        return self.clean[i] + self.ambiguous[i]


# 20 shards per client, ambiguity rising with the client index
DEFAULT_SPEC = ShardSpec((19, 15, 10, 5, 1), (1, 5, 10, 15, 19), 60)


def gen_synthetic(n_per_class: int, num_classes: int, noise_rate: float, spread: float,
                  seed, *, ambiguous_per_class: int | None = None, num_features: int = 2,
                  overlap: float = 0.5, radius: float = 1.0) -> LabeledPool:
    """Gaussian class clusters placed evenly on a circle.

    Clean rows of class k are drawn around centre k.  Ambiguous rows of
    class k are drawn around the point a fraction ``overlap`` of the arc
    towards centre k+1, and their label is flipped to k+1 with probability
    ``noise_rate``.  Coordinates beyond the first two are pure noise with
    the same ``spread``.  Rows are ordered clean first, then ambiguous.
    """
    if not 0.0 <= noise_rate <= 1.0:
        raise ConfigError(f"noise_rate must lie in [0, 1], got {noise_rate}")
    if num_classes < 2 or n_per_class < 0 or num_features < 2 or spread < 0:
        raise ConfigError("need num_classes >= 2, num_features >= 2, spread >= 0")
    if ambiguous_per_class is None:
        ambiguous_per_class = n_per_class
    rng = np.random.default_rng(seed)
    step = 2.0 * np.pi / num_classes

    def around(angles):
        pts = rng.normal(0.0, spread, size=(len(angles), num_features))
        pts[:, 0] += radius * np.cos(angles)
        pts[:, 1] += radius * np.sin(angles)
        return pts

    clean_y = np.repeat(np.arange(num_classes), n_per_class)
    clean_X = around(clean_y * step)
    amb_y = np.repeat(np.arange(num_classes), ambiguous_per_class)
    amb_X = around((amb_y + overlap) * step)
    flip = rng.random(len(amb_y)) < noise_rate
    amb_label = np.where(flip, (amb_y + 1) % num_classes, amb_y)

    return LabeledPool(
        features=np.concatenate([clean_X, amb_X]),
        labels=np.concatenate([clean_y, amb_label]).astype(np.int64),
        ambiguous_mask=np.concatenate([np.zeros(len(clean_y), bool), np.ones(len(amb_y), bool)]),
        num_classes=num_classes,
        source_labels=np.concatenate([clean_y, amb_y]).astype(np.int64),
    )


def synthetic_for_spec(spec: ShardSpec, num_classes: int, noise_rate: float, spread: float,
                       seed, *, global_test_size: int = 1000, **kwargs) -> LabeledPool:
    """A synthetic pool just large enough for ``spec`` plus the global test set."""
    s = spec.shard_size
    clean = math.ceil((sum(spec.clean) * s + global_test_size) / num_classes)
    amb = math.ceil(sum(spec.ambiguous) * s / num_classes)
    return gen_synthetic(clean, num_classes, noise_rate, spread, seed,
                         ambiguous_per_class=amb, **kwargs)


def load_idx(images_path, labels_path) -> LabeledPool:
    """An MNIST-style IDX pair as a clean pool with pixels scaled to [0, 1]."""
    images, labels = load_mnist_arrays(images_path, labels_path)
    n = images.shape[0]
    features = images.reshape(n, -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    return LabeledPool(features, labels, np.zeros(n, bool),
                       num_classes=int(labels.max()) + 1 if n else 1)


def merge_pools(clean: LabeledPool, ambiguous: LabeledPool) -> LabeledPool:
    """Concatenate a clean pool and a pool whose rows are all marked ambiguous."""
    if clean.num_features != ambiguous.num_features:
        raise ConfigError("pools have different feature widths")
    return LabeledPool(
        np.concatenate([clean.features, ambiguous.features]),
        np.concatenate([clean.labels, ambiguous.labels]),
        np.concatenate([np.zeros(len(clean), bool), np.ones(len(ambiguous), bool)]),
        max(clean.num_classes, ambiguous.num_classes),
        np.concatenate([clean.source_labels, ambiguous.source_labels]),
    )


def inject_label_noise(pool: LabeledPool, fraction: float, noise_rate: float, seed) -> LabeledPool:
    """Mark a random ``fraction`` of rows ambiguous and flip each of those
    to the next class with probability ``noise_rate``."""
    if not (0.0 <= fraction <= 1.0 and 0.0 <= noise_rate <= 1.0):
        raise ConfigError("fraction and noise_rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n = len(pool)
    chosen = rng.permutation(n)[: int(round(fraction * n))]
    mask = pool.ambiguous_mask.copy()
    mask[chosen] = True
    labels = pool.labels.copy()
    flip = chosen[rng.random(len(chosen)) < noise_rate]
    labels[flip] = (labels[flip] + 1) % pool.num_classes
    return LabeledPool(pool.features, labels, mask, pool.num_classes, pool.source_labels)


@dataclass(frozen=True, eq=False)
class ClientData:
    train: Batch
    test: Batch
    train_ambiguous: np.ndarray
    test_ambiguous: np.ndarray
    # row indices into the source pool
    train_index: np.ndarray = field(repr=False)
    test_index: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class Partition:
    clients: list[ClientData]
    global_test: Batch
    global_test_index: np.ndarray
    num_classes: int

    @property
    def num_features(self) -> int:
        return self.global_test.features.shape[1]

    @property
    def sizes(self) -> list[int]:
        return [len(c.train) for c in self.clients]


def _cut_shards(index: np.ndarray, labels: np.ndarray, shard_size: int) -> list[np.ndarray]:
    # stable sort keeps equal labels in index order
    ordered = index[np.argsort(labels[index], kind="stable")]
    n = len(ordered) // shard_size
    return [ordered[k * shard_size:(k + 1) * shard_size] for k in range(n)]


def partition_shards(pool: LabeledPool, spec: ShardSpec, seed, *, test_fraction: float = 0.2,
                     global_test_size: int = 1000) -> Partition:
    """Deal class-sorted clean and ambiguous shards to clients per ``spec``.

    Rows are sorted by ``source_labels``.  For flipped rows that is the
    class they were drawn from, so an ambiguous shard keeps its label mix
    instead of collecting same-label rows from two overlap regions.
    A clean-only global test set of ``global_test_size`` rows is drawn
    first; each client's rows are then split ``1 - test_fraction`` /
    ``test_fraction`` into train and test.
    """
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    clean_idx = np.flatnonzero(~pool.ambiguous_mask)
    amb_idx = np.flatnonzero(pool.ambiguous_mask)
    if global_test_size > len(clean_idx):
        raise ConfigError(f"global test set of {global_test_size} exceeds {len(clean_idx)} clean rows")

    picked = rng.permutation(len(clean_idx))
    global_idx = np.sort(clean_idx[picked[:global_test_size]])
    clean_idx = np.sort(clean_idx[picked[global_test_size:]])

    dealt = []
    for name, index, counts in (("clean", clean_idx, spec.clean),
                                ("ambiguous", amb_idx, spec.ambiguous)):
        shards = _cut_shards(index, pool.source_labels, spec.shard_size)
        need = sum(counts)
        if need > len(shards):
            raise ConfigError(
                f"spec needs {need} {name} shards of {spec.shard_size} rows, pool has {len(shards)}")
        order = rng.permutation(len(shards))
        per_client, pos = [], 0
        for c in counts:
            per_client.append([shards[k] for k in order[pos:pos + c]])
            pos += c
        dealt.append(per_client)

    clients = []
    for clean_shards, amb_shards in zip(*dealt):
        rows = np.concatenate(clean_shards + amb_shards).astype(np.int64)
        rows = rows[rng.permutation(len(rows))]
        n_test = int(round(test_fraction * len(rows)))
        if len(rows) - n_test < 1:
            raise ConfigError("a client would get an empty train split")
        tr, te = rows[: len(rows) - n_test], rows[len(rows) - n_test:]
        clients.append(ClientData(
            train=Batch(pool.features[tr], pool.labels[tr]),
            test=Batch(pool.features[te], pool.labels[te]),
            train_ambiguous=pool.ambiguous_mask[tr],
            test_ambiguous=pool.ambiguous_mask[te],
            train_index=tr,
            test_index=te,
        ))
    return Partition(clients, Batch(pool.features[global_idx], pool.labels[global_idx]),
                     global_idx, pool.num_classes)
