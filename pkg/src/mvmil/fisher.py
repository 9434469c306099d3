"""Fisher-vector encoding of instance bags against a diagonal GMM.

For a bag X = {x_1..x_n} and component k with posterior gamma_j(k):

    f_mu_k    = 1/sqrt(w_k)       * sum_j gamma_j(k) (x_j - mu_k) / sigma_k
    f_sigma_k = 1/sqrt(2 w_k)     * sum_j gamma_j(k) [ (x_j - mu_k)^2 / sigma_k^2 - 1 ]

The encoding concatenates [f_mu_1 .. f_mu_K, f_sigma_1 .. f_sigma_K]
(length 2*K*D). The sums are kept as plain sums, with no 1/n averaging, so
encoding a union of bags is the elementwise sum of their encodings; the
improved-FV normalization (signed square root, then L2) removes bag-size
scale afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binio import Writer, read_file
from .datamodel import Dataset
from .gmm import GmmModel, soft_assign
from .parallel import ordered_map
from .pca import PcaModel, project

MATRIX_MAGIC = b"MILM"


@dataclass(frozen=True)
class FisherVector:
    values: np.ndarray = field(repr=False)
    normalized: bool = False

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"Fisher vector must be 1-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("Fisher vector contains non-finite values")
        if self.normalized:
            norm = float(np.linalg.norm(v))
            if norm != 0.0 and abs(norm - 1.0) > 1e-10:
                raise ValueError(f"normalized Fisher vector has L2 norm {norm!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


def encode(model: GmmModel, bag_instances: np.ndarray) -> FisherVector:
    """Unnormalized Fisher vector of one bag, length 2*K*D."""
    pts = np.asarray(bag_instances, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError(f"bag instances must be a nonempty (n_i, D) matrix, "
                         f"got shape {pts.shape}")
    gamma = soft_assign(model, pts).gamma                    # (n, K)

    # standardized deviations per component: (K, n, D) avoided by looping K
    f_mu = np.empty((model.num_components, model.dim))
    f_sigma = np.empty_like(f_mu)
    for k in range(model.num_components):
        z = (pts - model.means[k]) / model.stds[k]           # (n, D)
        g = gamma[:, k][:, None]
        f_mu[k] = (g * z).sum(axis=0) / np.sqrt(model.weights[k])
        f_sigma[k] = (g * (z * z - 1.0)).sum(axis=0) / np.sqrt(2.0 * model.weights[k])
    return FisherVector(values=np.concatenate([f_mu.ravel(), f_sigma.ravel()]),
                        normalized=False)


def normalize(fv: FisherVector) -> FisherVector:
    """Improved-FV normalization: signed square root, then L2.

    An all-zero vector stays all-zero.
    """
    if fv.normalized:
        raise ValueError("Fisher vector is already normalized")
    v = np.sign(fv.values) * np.sqrt(np.abs(fv.values))
    norm = np.linalg.norm(v)
    if norm > 0.0:
        v = v / norm
    return FisherVector(values=v, normalized=True)


def encode_dataset(model: GmmModel, ds: Dataset, pca: PcaModel | None = None,
                   threads: int = 1) -> np.ndarray:
    """Normalized Fisher vectors for every bag, one row per bag in order.

    When a PCA model is given, instances are projected before encoding.
    Bags are encoded independently (optionally across threads); row i is
    always bag i.
    """

    def encode_one(bag):
        inst = project(pca, bag.instances) if pca is not None else bag.instances
        return normalize(encode(model, inst)).values

    rows = ordered_map(encode_one, ds.bags, threads=threads)
    return np.stack(rows)


# ---------------------------------------------------------------------------
# Encoded-matrix format ("MILM"): rows, cols, float64 payload; a sidecar
# "<path>.ids" text file lists bag ids in row order.
# ---------------------------------------------------------------------------


def ids_sidecar_path(path) -> str:
    return f"{path}.ids"


def save_matrix(matrix: np.ndarray, bag_ids, path) -> None:
    mat = np.ascontiguousarray(matrix, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {mat.shape}")
    ids = list(bag_ids)
    if len(ids) != mat.shape[0]:
        raise ValueError(f"{len(ids)} ids for {mat.shape[0]} rows")
    w = Writer(MATRIX_MAGIC)
    w.u32(mat.shape[0])
    w.u32(mat.shape[1])
    w.f64_array(mat)
    w.save(path)
    with open(ids_sidecar_path(path), "w", encoding="utf-8") as fh:
        fh.write("".join(f"{bag_id}\n" for bag_id in ids))


def load_matrix(path) -> tuple[np.ndarray, list[str]]:
    r = read_file(path, MATRIX_MAGIC)
    rows = r.u32("row count")
    cols = r.u32("column count")
    payload = r.f64_array(rows * cols, "matrix payload").reshape(rows, cols)
    r.expect_eof()
    with open(ids_sidecar_path(path), "r", encoding="utf-8") as fh:
        ids = [line.rstrip("\n") for line in fh]
    if len(ids) != rows:
        raise ValueError(f"{ids_sidecar_path(path)}: {len(ids)} ids for {rows} rows")
    return payload, ids
