"""Core domain types and bit-exact file I/O.

A *bag* is one image: an ordered set of per-proposal feature vectors plus a
multi-label 0/1 target vector. Bags travel in datasets; strong-label
exemplars (single-object ground-truth features) travel in pools. Both have
a fixed binary layout (see `write_bag_file` / `write_pool_file`) chosen so
that write -> read reproduces every float bit-exactly.

All types are immutable after construction and safe to share across
workers; the backing numpy arrays are marked read-only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .binio import FileFormatError, Reader, Writer, read_file

BAG_MAGIC = b"MILB"
POOL_MAGIC = b"MILP"


def _frozen_f64(values, shape_hint: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError(f"{shape_hint} contains non-finite values")
    arr.setflags(write=False)
    return arr


def default_class_names(num_classes: int) -> tuple[str, ...]:
    """Class names used when a source carries none (bag files store no names)."""
    return tuple(f"class_{c}" for c in range(num_classes))


@dataclass(frozen=True)
class Bag:
    """One image: an ordered block of instance feature vectors plus labels.

    instances has shape (n_i, D) with n_i >= 1; each row is one proposal's
    feature vector. labels is a 0/1 vector of length C. An all-zero label
    vector is allowed (test bags with unknown labels); training operations
    reject such bags.
    """

    id: str
    instances: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inst = _frozen_f64(self.instances, f"bag {self.id!r} instances")
        if inst.ndim != 2 or inst.shape[0] < 1 or inst.shape[1] < 1:
            raise ValueError(f"bag {self.id!r}: instances must be a (n_i, D) matrix "
                             f"with n_i >= 1 and D >= 1, got shape {inst.shape}")
        labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if labels.ndim != 1:
            raise ValueError(f"bag {self.id!r}: labels must be a vector")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError(f"bag {self.id!r}: label entries must be 0 or 1")
        labels.setflags(write=False)
        object.__setattr__(self, "instances", inst)
        object.__setattr__(self, "labels", labels)

    @property
    def num_instances(self) -> int:
        return self.instances.shape[0]


@dataclass(frozen=True)
class Dataset:
    """A validated collection of bags with consistent dimensions.

    feature_dim is the shared instance dimension D; every bag's label
    vector has length len(class_names) = C >= 2.
    """

    bags: tuple[Bag, ...]
    class_names: tuple[str, ...]
    feature_dim: int

    def __post_init__(self):
        bags = tuple(self.bags)
        names = tuple(self.class_names)
        if len(bags) < 1:
            raise ValueError("dataset must contain at least one bag")
        if len(names) < 2:
            raise ValueError(f"dataset needs C >= 2 classes, got {len(names)}")
        for bag in bags:
            if bag.labels.shape[0] != len(names):
                raise ValueError(f"bag {bag.id!r}: label length {bag.labels.shape[0]} "
                                 f"!= C={len(names)}")
            if bag.instances.shape[1] != self.feature_dim:
                raise ValueError(f"bag {bag.id!r}: instance dimension "
                                 f"{bag.instances.shape[1]} != D={self.feature_dim}")
        object.__setattr__(self, "bags", bags)
        object.__setattr__(self, "class_names", names)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_bags(self) -> int:
        return len(self.bags)

    def label_matrix(self) -> np.ndarray:
        """(n, C) 0/1 matrix in bag order."""
        return np.stack([bag.labels for bag in self.bags]).astype(np.uint8)


@dataclass(frozen=True)
class LabeledExemplar:
    """A strong-label exemplar: one feature vector with exactly one class."""

    features: np.ndarray
    class_index: int

    def __post_init__(self):
        feats = _frozen_f64(self.features, "exemplar features")
        if feats.ndim != 1 or feats.shape[0] < 1:
            raise ValueError(f"exemplar features must be a nonempty vector, shape {feats.shape}")
        if self.class_index < 0:
            raise ValueError(f"exemplar class_index must be >= 0, got {self.class_index}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "class_index", int(self.class_index))


@dataclass(frozen=True)
class ScoreMatrix:
    """Per-bag, per-class classifier scores; row order matches bag_ids."""

    bag_ids: tuple[str, ...]
    scores: np.ndarray = field(repr=False)

    def __post_init__(self):
        ids = tuple(self.bag_ids)
        scores = _frozen_f64(self.scores, "scores")
        if scores.ndim != 2:
            raise ValueError(f"scores must be a (n, C) matrix, got shape {scores.shape}")
        if len(ids) != scores.shape[0]:
            raise ValueError(f"{len(ids)} bag ids but {scores.shape[0]} score rows")
        object.__setattr__(self, "bag_ids", ids)
        object.__setattr__(self, "scores", scores)


# ---------------------------------------------------------------------------
# Bag files ("MILB")
#
# magic "MILB" | version u32=1 | C u32 | D u32 | n u32
# per bag: id-length u16 | UTF-8 id | C label bytes (0/1) | n_i u32
#          | n_i * D float64 row-major
# All integers little-endian. Class names are not stored; readers assign
# default_class_names(C).
# ---------------------------------------------------------------------------


def read_bag_file(path) -> Dataset:
    """Read and validate a bag file; never returns a partial Dataset."""
    r = read_file(path, BAG_MAGIC)
    num_classes = r.u32("class count C")
    if num_classes < 2:
        raise r.error(f"malformed header: C must be >= 2, got {num_classes}", offset=8)
    feature_dim = r.u32("feature dimension D")
    if feature_dim < 1:
        raise r.error(f"malformed header: D must be >= 1, got {feature_dim}", offset=12)
    num_bags = r.u32("bag count n")
    if num_bags < 1:
        raise r.error(f"malformed header: n must be >= 1, got {num_bags}", offset=16)

    bags = []
    for b in range(num_bags):
        id_len = r.u16(f"bag {b} id length")
        bag_id = r.utf8(id_len, f"bag {b} id")
        label_off = r.offset
        label_bytes = np.frombuffer(r.bytes_(num_classes, f"bag {b} labels"), dtype=np.uint8)
        bad = np.flatnonzero(label_bytes > 1)
        if bad.size:
            raise r.error(f"bag {b}: label byte {int(label_bytes[bad[0]])} not in {{0,1}}",
                          offset=label_off + int(bad[0]))
        n_i = r.u32(f"bag {b} instance count")
        if n_i < 1:
            raise r.error(f"bag {b}: instance count must be >= 1", offset=r.offset - 4)
        flat = r.f64_array(n_i * feature_dim, f"bag {b} instances")
        bags.append(Bag(id=bag_id, instances=flat.reshape(n_i, feature_dim),
                        labels=label_bytes.copy()))
    r.expect_eof()
    return Dataset(bags=tuple(bags), class_names=default_class_names(num_classes),
                   feature_dim=feature_dim)


def write_bag_file(ds: Dataset, path) -> None:
    """Write `ds` so that read_bag_file reproduces it bit-exactly.

    Class names are not part of the format; a round trip yields the
    default derived names.
    """
    w = Writer(BAG_MAGIC)
    w.u32(ds.num_classes)
    w.u32(ds.feature_dim)
    w.u32(ds.num_bags)
    for bag in ds.bags:
        raw_id = bag.id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise ValueError(f"bag id too long ({len(raw_id)} bytes)")
        w.u16(len(raw_id))
        w.bytes_(raw_id)
        w.bytes_(bag.labels.tobytes())
        w.u32(bag.num_instances)
        w.f64_array(bag.instances)
    w.save(path)


# ---------------------------------------------------------------------------
# Pool files ("MILP")
#
# magic "MILP" | version u32=1 | C u32 | D u32 | m u32
# per exemplar: class u32 | D float64
# ---------------------------------------------------------------------------


def read_pool_file(path) -> tuple[list[LabeledExemplar], int]:
    """Read a pool file; returns (exemplars, num_classes)."""
    r = read_file(path, POOL_MAGIC)
    num_classes = r.u32("class count C")
    if num_classes < 2:
        raise r.error(f"malformed header: C must be >= 2, got {num_classes}", offset=8)
    feature_dim = r.u32("feature dimension D")
    if feature_dim < 1:
        raise r.error(f"malformed header: D must be >= 1, got {feature_dim}", offset=12)
    count = r.u32("exemplar count m")
    if count < 1:
        raise r.error(f"malformed header: m must be >= 1, got {count}", offset=16)

    exemplars = []
    for i in range(count):
        cls_off = r.offset
        cls = r.u32(f"exemplar {i} class")
        if cls >= num_classes:
            raise r.error(f"exemplar {i}: class {cls} out of range [0, {num_classes})",
                          offset=cls_off)
        feats = r.f64_array(feature_dim, f"exemplar {i} features")
        exemplars.append(LabeledExemplar(features=feats, class_index=cls))
    r.expect_eof()
    return exemplars, num_classes


def write_pool_file(exemplars: list[LabeledExemplar], num_classes: int, path) -> None:
    if not exemplars:
        raise ValueError("pool must contain at least one exemplar")
    if num_classes < 2:
        raise ValueError(f"pool needs C >= 2 classes, got {num_classes}")
    dim = exemplars[0].features.shape[0]
    w = Writer(POOL_MAGIC)
    w.u32(num_classes)
    w.u32(dim)
    w.u32(len(exemplars))
    for i, ex in enumerate(exemplars):
        if ex.class_index >= num_classes:
            raise ValueError(f"exemplar {i}: class {ex.class_index} out of range "
                             f"[0, {num_classes})")
        if ex.features.shape[0] != dim:
            raise ValueError(f"exemplar {i}: dimension {ex.features.shape[0]} != {dim}")
        w.u32(ex.class_index)
        w.f64_array(ex.features)
    w.save(path)


# ---------------------------------------------------------------------------
# Score CSV: header "bag_id,<class names...>", full-precision decimals.
# ---------------------------------------------------------------------------


def write_score_csv(matrix: ScoreMatrix, class_names, path) -> None:
    names = list(class_names)
    if len(names) != matrix.scores.shape[1]:
        raise ValueError(f"{len(names)} class names but {matrix.scores.shape[1]} score columns")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bag_id", *names])
        for bag_id, row in zip(matrix.bag_ids, matrix.scores):
            writer.writerow([bag_id, *(repr(float(v)) for v in row)])


def read_score_csv(path) -> tuple[ScoreMatrix, tuple[str, ...]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "bag_id":
        raise FileFormatError(path, 0, "malformed header: expected 'bag_id,<class names...>'")
    names = tuple(rows[0][1:])
    if len(names) < 1:
        raise FileFormatError(path, 0, "malformed header: no class columns")
    ids, scores = [], []
    for idx, row in enumerate(rows[1:], start=2):
        if len(row) != len(names) + 1:
            raise FileFormatError(path, 0, f"line {idx}: expected {len(names) + 1} fields, "
                                           f"got {len(row)}")
        ids.append(row[0])
        try:
            scores.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise FileFormatError(path, 0, f"line {idx}: {exc}") from exc
    if not ids:
        raise FileFormatError(path, 0, "no score rows")
    return ScoreMatrix(bag_ids=tuple(ids), scores=np.array(scores, dtype=np.float64)), names
