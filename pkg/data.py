"""
data.py — FedSim Dataset & Partition Handling
---------------------------------------------
Synthetic Gaussian-blob generation, IDX (MNIST / Fashion-MNIST) ingestion,
validation holdout, quantity-based Dirichlet partitioning across clients
and the size-based ground truth used to score contribution estimates.
"""

from __future__ import annotations

import gzip
import hashlib
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from rng import MASK64, generator

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MAX_REDRAWS = 100


class IdxFormatError(ValueError):
    """Malformed IDX file: wrong magic, truncated payload or count mismatch."""


class PartitionError(ValueError):
    """Partition capacity violated or Dirichlet redraw budget exhausted."""


# ============================================================
# 1. TYPES
# ============================================================
@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray   # N x input_dim, float64
    labels: np.ndarray     # N, int64

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"feature/label count mismatch: {self.features.shape[0]} vs {self.labels.shape[0]}"
            )
        if self.features.shape[0] < 1:
            raise ValueError("dataset must contain at least one record")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])


@dataclass(frozen=True)
class DatasetSpec:
    name: str = "synthetic"
    kind: Literal["synthetic", "idx"] = "synthetic"
    num_classes: int = 4
    input_dim: int = 8
    per_class_count: int = 250
    noise_sigma: float = 1.0
    images_path: str | None = None
    labels_path: str | None = None
    limit: int | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "idx"):
            raise ValueError(f"unknown dataset kind: {self.kind!r}")
        if self.num_classes < 2 or self.input_dim < 1 or self.per_class_count < 1:
            raise ValueError("num_classes >= 2, input_dim >= 1 and per_class_count >= 1 required")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.kind == "idx" and not (self.images_path and self.labels_path):
            raise ValueError("idx datasets need images_path and labels_path")
        if self.limit is not None and self.limit < 1:
            raise ValueError("limit must be positive")


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int = 5
    alpha: float = 1.0
    seed: int = 0
    min_shard: int = 1

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be positive")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be a positive real, got {self.alpha}")
        if self.min_shard < 1:
            raise ValueError("min_shard must be >= 1")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class ClientDataset:
    client_id: int
    data: Dataset
    indices: np.ndarray

    @property
    def size(self) -> int:
        return len(self.data)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    shares: np.ndarray

    def __post_init__(self):
        if np.any(self.shares <= 0) or abs(float(self.shares.sum()) - 1.0) > 1e-12:
            raise ValueError("ground-truth shares must be positive and sum to 1")


# ============================================================
# 2. GENERATION & INGESTION
# ============================================================
def gen_synthetic(
    num_classes: int, input_dim: int, per_class_count: int, noise_sigma: float, seed: int
) -> Dataset:
    """Gaussian blobs: one mean per class on U[-2,2]^d, points = mean + N(0, sigma^2 I)."""
    if min(num_classes, input_dim, per_class_count) < 1:
        raise ValueError("all counts must be positive")
    rng = generator(seed)
    means = rng.uniform(-2.0, 2.0, size=(num_classes, input_dim))
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class_count)
    noise = rng.standard_normal(size=(labels.shape[0], input_dim))
    features = means[labels] + noise_sigma * noise
    return Dataset(features.astype(np.float64), labels)


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _idx_header(raw: bytes, magic: int, ndims: int, path) -> tuple[int, ...]:
    head = 4 + 4 * ndims
    if len(raw) < head:
        raise IdxFormatError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    return struct.unpack(">" + "I" * ndims, raw[4:head])


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Read an IDX image/label pair; pixels scaled to [0, 1] by /255."""
    raw_img = _read_bytes(images_path)
    count, rows, cols = _idx_header(raw_img, IDX_IMAGES_MAGIC, 3, images_path)
    payload = raw_img[16:]
    if len(payload) < count * rows * cols:
        raise IdxFormatError(f"{images_path}: truncated payload ({len(payload)} of {count * rows * cols} bytes)")

    raw_lbl = _read_bytes(labels_path)
    (n_labels,) = _idx_header(raw_lbl, IDX_LABELS_MAGIC, 1, labels_path)
    if len(raw_lbl) - 8 < n_labels:
        raise IdxFormatError(f"{labels_path}: truncated payload")
    if n_labels != count:
        raise IdxFormatError(f"image/label count mismatch: {count} images, {n_labels} labels")

    pixels = np.frombuffer(payload, dtype=np.uint8, count=count * rows * cols)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(raw_lbl, dtype=np.uint8, count=n_labels, offset=8).astype(np.int64)
    log.info("Loaded IDX → %d records (%dx%d) from %s", count, rows, cols, images_path)
    return Dataset(features, labels)


def build_dataset(spec: DatasetSpec, seed: int) -> Dataset:
    """Materialise a DatasetSpec; `limit` takes a seeded subsample (desk-scale real data)."""
    if spec.kind == "synthetic":
        ds = gen_synthetic(spec.num_classes, spec.input_dim, spec.per_class_count, spec.noise_sigma, seed)
    else:
        ds = load_idx(spec.images_path, spec.labels_path)
        if ds.features.shape[1] != spec.input_dim:
            raise ValueError(f"{spec.name}: records have {ds.features.shape[1]} features, spec says {spec.input_dim}")
        if int(ds.labels.max()) >= spec.num_classes:
            raise ValueError(f"{spec.name}: label {int(ds.labels.max())} outside num_classes={spec.num_classes}")
    if spec.limit is not None and spec.limit < len(ds):
        idx = np.sort(generator(seed).permutation(len(ds))[:spec.limit])
        ds = ds.subset(idx)
    return ds


# ============================================================
# 3. HOLDOUT & PARTITION
# ============================================================
def holdout_split(ds: Dataset, frac: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle; the first ceil(frac*N) records become the validation set."""
    if not 0.0 < frac < 1.0:
        raise ValueError(f"holdout fraction must lie in (0, 1), got {frac}")
    n = len(ds)
    k = math.ceil(frac * n)
    if k < 1 or k >= n:
        raise ValueError(f"holdout of {k} from {n} records leaves an empty side")
    perm = generator(seed).permutation(n)
    return ds.subset(np.sort(perm[k:])), ds.subset(np.sort(perm[:k]))


def largest_remainder(p: np.ndarray, total: int) -> np.ndarray:
    """Integer sizes proportional to p summing exactly to total; ties go to lower index."""
    raw = np.asarray(p, dtype=np.float64) * total
    base = np.floor(raw).astype(np.int64)
    rest = total - int(base.sum())
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rest]] += 1
    return base


def _dirichlet(alpha: float, n: int, seed: int) -> np.ndarray | None:
    g = generator(seed).gamma(alpha, 1.0, size=n)
    s = float(g.sum())
    if not (s > 0 and math.isfinite(s)):
        return None
    return g / s


def dirichlet_partition(
    ds: Dataset, spec: PartitionSpec, proportions: Sequence[float] | None = None
) -> list[ClientDataset]:
    """
    Quantity-based non-IID split: shard sizes follow p ~ Dir(alpha * 1_n),
    labels fall where the seeded shuffle puts them. Shards smaller than
    `min_shard` trigger a redraw with sub-seed seed+1, seed+2, ...
    `proportions` bypasses the Dirichlet draw.
    """
    n, total = spec.num_clients, len(ds)
    if total < n * spec.min_shard:
        raise PartitionError(f"{total} records cannot fill {n} shards of at least {spec.min_shard}")

    sizes = None
    if proportions is not None:
        p = np.asarray(proportions, dtype=np.float64)
        if p.shape[0] != n or np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError("proportions must be n non-negative values summing to 1")
        sizes = largest_remainder(p, total)
        if sizes.min() < spec.min_shard:
            raise PartitionError(f"fixed proportions give a shard below min_shard={spec.min_shard}")
    else:
        for attempt in range(MAX_REDRAWS + 1):
            p = _dirichlet(spec.alpha, n, (spec.seed + attempt) & MASK64)
            if p is not None:
                cand = largest_remainder(p, total)
                if cand.min() >= spec.min_shard:
                    sizes = cand
                    break
            log.warning("Partition redraw %d (alpha=%g): shard below min_shard", attempt + 1, spec.alpha)
        if sizes is None:
            raise PartitionError(f"no valid partition after {MAX_REDRAWS} redraws (alpha={spec.alpha})")

    perm = generator(spec.seed).permutation(total)
    parts, pos = [], 0
    for cid, size in enumerate(sizes):
        idx = np.sort(perm[pos:pos + int(size)])
        parts.append(ClientDataset(client_id=cid, data=ds.subset(idx), indices=idx))
        pos += int(size)
    return parts


def ground_truth_sizes(parts: Sequence[ClientDataset]) -> GroundTruth:
    """g_i = n_i / sum_j n_j."""
    if not parts:
        raise ValueError("no client shards")
    sizes = np.array([p.size for p in parts], dtype=np.float64)
    return GroundTruth(sizes / sizes.sum())


def partition_digest(parts: Sequence[ClientDataset]) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(struct.pack(">Q", p.client_id))
        h.update(np.ascontiguousarray(p.indices, dtype=">i8").tobytes())
    return h.hexdigest()
