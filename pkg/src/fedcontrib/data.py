"""Synthetic datasets and the three client partition schemes.

Partitions assign index sets into a parent dataset:

* ``partition_uni``  -- near-equal random split (i.i.d. setting),
* ``partition_pow``  -- client sizes follow a power-law profile
  (size-heterogeneous setting),
* ``partition_cla``  -- each client covers a prescribed number of distinct
  classes while sample counts stay balanced (class-imbalance setting).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasiblePartition

# Spacing of the class-mean lattice, in units of feature space.  Together
# with the caller's `spread` this controls how separable the blobs are.
LATTICE_STEP = 2.0


@dataclass(frozen=True)
class Dataset:
    """A fixed design matrix with integer labels in [0, num_classes)."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray    # (n,) int64
    num_classes: int

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if f.ndim != 2 or f.shape[0] == 0:
            raise ValueError(f"features must be a non-empty (n, d) matrix, got {f.shape}")
        if y.shape != (f.shape[0],):
            raise ValueError("labels must be one integer per row")
        if not np.all(np.isfinite(f)):
            raise ValueError("features contain NaN or Inf")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def distinct_classes(self) -> int:
        return int(np.unique(self.labels).size)


@dataclass(frozen=True)
class Partition:
    """Disjoint per-client index sets into a parent dataset."""

    client_indices: tuple  # tuple of sorted int64 arrays

    def __post_init__(self):
        arrays = tuple(np.asarray(a, dtype=np.int64) for a in self.client_indices)
        seen = set()
        for i, a in enumerate(arrays):
            if a.size == 0:
                raise InfeasiblePartition(f"client {i} received no samples")
            s = set(a.tolist())
            if len(s) != a.size or s & seen:
                raise InfeasiblePartition("client index sets overlap")
            seen |= s
        object.__setattr__(self, "client_indices", tuple(np.sort(a) for a in arrays))

    @property
    def n_clients(self) -> int:
        return len(self.client_indices)

    def sizes(self) -> list[int]:
        return [int(a.size) for a in self.client_indices]


def _class_means(num_classes: int, dim: int) -> np.ndarray:
    """Deterministic lattice of class means: base-B digit codes scaled by LATTICE_STEP."""
    base = 2
    while base**dim < num_classes:
        base += 1
    means = np.zeros((num_classes, dim))
    for k in range(num_classes):
        rem = k
        for j in range(dim):
            means[k, j] = rem % base
            rem //= base
    return means * LATTICE_STEP


def gen_synthetic(num_classes: int, dim: int, per_class: int, spread: float, seed: int) -> Dataset:
    """Gaussian blobs around fixed lattice means, one blob per class.

    Identical arguments (including the seed) give bit-identical datasets.
    Rows are ordered class-major: class 0 first, then class 1, and so on.
    """
    if num_classes < 2 or dim < 2 or per_class < 1:
        raise ValueError("need num_classes >= 2, dim >= 2, per_class >= 1")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    means = _class_means(num_classes, dim)
    features = np.empty((num_classes * per_class, dim))
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    for k in range(num_classes):
        block = slice(k * per_class, (k + 1) * per_class)
        features[block] = means[k] + spread * rng.standard_normal((per_class, dim))
        labels[block] = k
    return Dataset(features, labels, num_classes)


def split_dataset(data: Dataset, val_fraction: float, test_fraction: float, seed: int):
    """Shuffle once and carve (train, validation, test) before any partitioning."""
    if val_fraction < 0 or test_fraction < 0 or val_fraction + test_fraction >= 1:
        raise ValueError("fractions must be non-negative and sum to < 1")
    n = len(data)
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_fraction * n))
    n_val = int(round(val_fraction * n))
    test = data.subset(perm[:n_test])
    val = data.subset(perm[n_test:n_test + n_val])
    train = data.subset(perm[n_test + n_val:])
    return train, val, test


# ---------------------------------------------------------------------------
# Partitioners
# ---------------------------------------------------------------------------

def partition_uni(n: int, n_clients: int, seed: int) -> Partition:
    """Uniform split: sizes differ by at most one, assignment shuffled by seed."""
    if n < n_clients:
        raise InfeasiblePartition(f"cannot split {n} samples across {n_clients} clients")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, n_clients)
    parts, start = [], 0
    for i in range(n_clients):
        size = base + (1 if i < extra else 0)
        parts.append(perm[start:start + size])
        start += size
    return Partition(tuple(parts))


def power_law_sizes(n: int, n_clients: int, a: float) -> list[int]:
    """Client sizes under the power-law profile with shape parameter a.

    Sizes are proportional to an evenly spaced grid between the 1% and 99%
    quantiles of the distribution with density a*x^(a-1) on [0, 1]; shares
    are rounded up and clients are filled in order until the pool is
    exhausted, so the largest client absorbs the rounding slack.
    """
    if a <= 1:
        raise ValueError("power-law shape parameter must exceed 1")
    if n < n_clients:
        raise InfeasiblePartition(f"cannot split {n} samples across {n_clients} clients")
    lo, hi = 0.01 ** (1.0 / a), 0.99 ** (1.0 / a)
    grid = np.linspace(lo, hi, n_clients)
    shares = grid / grid.sum() * n
    sizes, remaining = [], n
    for share in shares:
        take = min(int(math.ceil(share)), remaining)
        sizes.append(take)
        remaining -= take
    sizes[-1] += remaining
    if any(s <= 0 for s in sizes):
        raise InfeasiblePartition("power-law profile starves at least one client")
    if any(sizes[i] > sizes[i + 1] for i in range(n_clients - 1)):
        raise InfeasiblePartition("power-law sizes not non-decreasing for these arguments")
    return sizes


def partition_pow(n: int, n_clients: int, a: float, seed: int) -> Partition:
    """Power-law split: deterministic sizes, index assignment shuffled by seed."""
    sizes = power_law_sizes(n, n_clients, a)
    perm = np.random.default_rng(seed).permutation(n)
    parts, start = [], 0
    for size in sizes:
        parts.append(perm[start:start + size])
        start += size
    return Partition(tuple(parts))


def partition_cla(data: Dataset, n_clients: int, class_counts: list[int], seed: int) -> Partition:
    """Class-imbalance split.

    Client i draws samples from exactly ``class_counts[i]`` distinct classes
    while per-client sample counts stay equal up to +-1.  Coverage windows
    are contiguous (mod C) and shared pairwise: clients 2j and 2j+1 both
    start at class 2j mod C, so equal-count neighbours see the same label
    distribution while coverage still spreads over all classes.  Clients
    are served most-constrained first and always draw from their fullest
    admissible class pool, so tightly fitting schedules remain feasible.
    """
    C = data.num_classes
    if len(class_counts) != n_clients:
        raise ValueError("one class count per client required")
    if any(c < 1 or c > C for c in class_counts):
        raise InfeasiblePartition(f"class counts must lie in [1, {C}]")
    n = len(data)
    if n < n_clients:
        raise InfeasiblePartition(f"cannot split {n} samples across {n_clients} clients")

    rng = np.random.default_rng(seed)
    pools = []
    for k in range(C):
        idx = np.flatnonzero(data.labels == k)
        pools.append(list(idx[rng.permutation(idx.size)]))

    base, extra = divmod(n, n_clients)
    quotas = [base + (1 if i < extra else 0) for i in range(n_clients)]
    allowed = [[(2 * (i // 2) + j) % C for j in range(class_counts[i])] for i in range(n_clients)]

    parts: list[list[int]] = [[] for _ in range(n_clients)]
    order = sorted(range(n_clients), key=lambda i: (class_counts[i], i))
    for i in order:
        quota = quotas[i]
        if quota < class_counts[i]:
            raise InfeasiblePartition(f"client {i} cannot cover {class_counts[i]} classes with {quota} samples")
        # One sample from every admissible class first, to pin the coverage.
        for k in allowed[i]:
            if not pools[k]:
                raise InfeasiblePartition(f"class {k} exhausted before client {i} could cover it")
            parts[i].append(pools[k].pop())
        # Then water-fill from whichever admissible pool is currently fullest.
        for _ in range(quota - class_counts[i]):
            k = max(allowed[i], key=lambda c: (len(pools[c]), -c))
            if not pools[k]:
                raise InfeasiblePartition(f"pools exhausted while filling client {i}")
            parts[i].append(pools[k].pop())
    return Partition(tuple(np.asarray(p, dtype=np.int64) for p in parts))


def augment_jitter(data: Dataset, noise_std: float, multiplier: int, seed: int) -> Dataset:
    """Original samples plus (multiplier - 1) jittered copies with Gaussian feature noise."""
    if noise_std < 0 or multiplier < 1:
        raise ValueError("need noise_std >= 0 and multiplier >= 1")
    if multiplier == 1:
        return Dataset(data.features.copy(), data.labels.copy(), data.num_classes)
    rng = np.random.default_rng(seed)
    blocks = [data.features]
    for _ in range(multiplier - 1):
        blocks.append(data.features + noise_std * rng.standard_normal(data.features.shape))
    features = np.concatenate(blocks, axis=0)
    labels = np.tile(data.labels, multiplier)
    return Dataset(features, labels, data.num_classes)


# ---------------------------------------------------------------------------
# CSV import/export
# ---------------------------------------------------------------------------

def save_csv(data: Dataset, path) -> None:
    """Write `f0,...,f{d-1},label` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(data.dim)] + ["label"])
        for row, label in zip(data.features, data.labels):
            writer.writerow([repr(float(x)) for x in row] + [int(label)])


def load_csv(path, num_classes: int | None = None) -> Dataset:
    """Read a dataset written by save_csv, validating the label range."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ValueError("expected a header ending with 'label'")
        dim = len(header) - 1
        feats, labels = [], []
        for row in reader:
            if len(row) != dim + 1:
                raise ValueError(f"row of width {len(row)}, expected {dim + 1}")
            feats.append([float(x) for x in row[:dim]])
            labels.append(int(row[dim]))
    y = np.asarray(labels, dtype=np.int64)
    C = num_classes if num_classes is not None else int(y.max()) + 1
    if y.min() < 0 or y.max() >= C:
        raise ValueError(f"labels outside [0, {C})")
    return Dataset(np.asarray(feats), y, C)
