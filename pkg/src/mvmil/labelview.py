"""Candidate pool, exact kNN in the learned metric space, and view fusion.

The pool holds strong-label exemplars projected through the learned metric.
Each proposal gets two representations: a *feature view* (its PCA-projected
raw feature) and a *label view* (the concatenated one-hot labels of its k
nearest pool exemplars, found in the metric space). Fusion concatenates
the feature view with the lambda-scaled label view; the fused vectors feed
GMM fitting and Fisher encoding downstream.

kNN here is exact brute force with a deterministic tie-break (lower pool
index first), so identical inputs give identical neighbor lists on every
run and every thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binio import Writer, read_file
from .datamodel import Bag, LabeledExemplar
from .metric import MetricProjection, project
from .pca import PcaModel
from .pca import project as pca_project

POOL_MODEL_MAGIC = b"MILQ"


@dataclass(frozen=True)
class CandidatePool:
    """Projected exemplar features (m, d_out) with one-hot labels (m, C).

    class_coverage may be a strict subset of the C classes: a pool built
    from partial strong labels still answers every query, which is what
    lets the label view generalize to classes it has never seen.
    """

    features: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValueError(f"pool features must be (m, d) with m >= 1, "
                             f"got shape {feats.shape}")
        if not np.isfinite(feats).all():
            raise ValueError("pool features contain non-finite values")
        if labels.ndim != 2 or labels.shape[0] != feats.shape[0]:
            raise ValueError(f"pool labels must be ({feats.shape[0]}, C), "
                             f"got shape {labels.shape}")
        if labels.shape[1] < 2:
            raise ValueError(f"pool needs C >= 2 classes, got {labels.shape[1]}")
        if not ((labels.sum(axis=1) == 1).all() and np.isin(labels, (0, 1)).all()):
            raise ValueError("every pool label row must be one-hot")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def class_indices(self) -> np.ndarray:
        return self.labels.argmax(axis=1)

    @property
    def class_coverage(self) -> frozenset[int]:
        return frozenset(int(c) for c in np.unique(self.class_indices))


@dataclass(frozen=True)
class LabelViewVector:
    """Concatenation of the one-hot labels of the k nearest exemplars.

    values has length k*C with exactly one 1 in each C-sized block, the
    blocks ordered by ascending neighbor distance.
    """

    values: np.ndarray
    k: int

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.k < 1 or v.ndim != 1 or v.shape[0] % self.k != 0:
            raise ValueError(f"values length {v.shape} not divisible into "
                             f"k={self.k} blocks")
        blocks = v.reshape(self.k, -1)
        if not (np.isin(blocks, (0.0, 1.0)).all() and (blocks.sum(axis=1) == 1.0).all()):
            raise ValueError("each C-sized block must be one-hot")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def num_classes(self) -> int:
        return self.values.shape[0] // self.k


@dataclass
class FusionConfig:
    """lam is the trade-off scaling the label view at fusion time."""

    lam: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")


def build_pool(exemplars: list[LabeledExemplar], w: MetricProjection,
               num_classes: int) -> CandidatePool:
    """Project the exemplars through the learned metric and one-hot them."""
    if not exemplars:
        raise ValueError("cannot build a pool from an empty exemplar list")
    raw = np.stack([ex.features for ex in exemplars])
    if raw.shape[1] != w.input_dim:
        raise ValueError(f"exemplar dimension {raw.shape[1]} != metric input "
                         f"dimension {w.input_dim}")
    labels = np.zeros((len(exemplars), num_classes), dtype=np.uint8)
    for i, ex in enumerate(exemplars):
        if ex.class_index >= num_classes:
            raise ValueError(f"exemplar {i}: class {ex.class_index} out of "
                             f"range [0, {num_classes})")
        labels[i, ex.class_index] = 1
    return CandidatePool(features=project(w, raw), labels=labels)


def _knn_batch(pool_features: np.ndarray, queries: np.ndarray, k: int,
               chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """(q, k) neighbor indices and squared distances, ties to lower index.

    Distances come from direct differences (no norm expansion), so equal
    points give exactly zero and the ordering matches a full-sort oracle
    bit for bit. The stable argsort keeps tied entries in index order.
    """
    m = pool_features.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    idx = np.empty((queries.shape[0], k), dtype=np.int64)
    d2 = np.empty((queries.shape[0], k))
    for start in range(0, queries.shape[0], chunk):
        stop = min(start + chunk, queries.shape[0])
        diff = queries[start:stop, None, :] - pool_features[None, :, :]
        dist2 = (diff * diff).sum(axis=-1)
        order = np.argsort(dist2, axis=1, kind="stable")[:, :k]
        idx[start:stop] = order
        d2[start:stop] = np.take_along_axis(dist2, order, axis=1)
    return idx, d2


def knn(pool: CandidatePool, query: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Exact k nearest exemplars: (index, Euclidean distance), ascending."""
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != pool.dim:
        raise ValueError(f"query must be a length-{pool.dim} vector, "
                         f"got shape {q.shape}")
    idx, d2 = _knn_batch(pool.features, q[None, :], k)
    return [(int(i), float(np.sqrt(d))) for i, d in zip(idx[0], d2[0])]


def encode_label_view(pool: CandidatePool, query: np.ndarray, k: int) -> LabelViewVector:
    """Stack the one-hot labels of the k nearest exemplars into one vector."""
    neighbors = knn(pool, query, k)
    rows = pool.labels[[i for i, _ in neighbors]]
    return LabelViewVector(values=rows.astype(np.float64).ravel(), k=k)


def fuse(feature_view: np.ndarray, label_view: LabelViewVector,
         cfg: FusionConfig) -> np.ndarray:
    """[feature view, lam * label view]; length len(f) + k*C."""
    f = np.asarray(feature_view, dtype=np.float64)
    if f.ndim != 1:
        raise ValueError(f"feature view must be a vector, got shape {f.shape}")
    return np.concatenate([f, cfg.lam * label_view.values])


def encode_bag_views(bag: Bag, std_pca: PcaModel, w: MetricProjection,
                     pool: CandidatePool, k: int, cfg: FusionConfig) -> np.ndarray:
    """Fused per-proposal matrix for one bag, shape (n_i, d_pca + k*C).

    The feature view of a proposal is its PCA projection of the raw
    feature; the label view is computed from the metric projection of the
    same raw feature. Row order follows the bag's instance order.
    """
    feature_view = pca_project(std_pca, bag.instances)
    projected = project(w, bag.instances)
    idx, _ = _knn_batch(pool.features, projected, k)
    label_block = pool.labels[idx].astype(np.float64).reshape(bag.num_instances, -1)
    return np.hstack([feature_view, cfg.lam * label_block])


def save_pool(pool: CandidatePool, path) -> None:
    w = Writer(POOL_MODEL_MAGIC)
    w.u32(pool.size)
    w.u32(pool.dim)
    w.u32(pool.num_classes)
    w.f64_array(pool.features)
    w.u32_array(pool.class_indices)
    w.save(path)


def load_pool(path) -> CandidatePool:
    r = read_file(path, POOL_MODEL_MAGIC)
    m = r.u32("pool size m")
    dim = r.u32("pool dimension d")
    num_classes = r.u32("class count C")
    if m < 1 or dim < 1 or num_classes < 2:
        raise r.error(f"malformed header: m={m}, d={dim}, C={num_classes}")
    feats = r.f64_array(m * dim, "pool features").reshape(m, dim)
    classes_off = r.offset
    classes = r.u32_array(m, "pool class indices")
    bad = np.flatnonzero(classes >= num_classes)
    if bad.size:
        raise r.error(f"exemplar {int(bad[0])}: class {int(classes[bad[0]])} out of "
                      f"range [0, {num_classes})", offset=classes_off + 4 * int(bad[0]))
    r.expect_eof()
    labels = np.zeros((m, num_classes), dtype=np.uint8)
    labels[np.arange(m), classes] = 1
    return CandidatePool(features=feats, labels=labels)
