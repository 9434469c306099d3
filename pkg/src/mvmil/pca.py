"""Energy-thresholded principal component reduction.

fit() keeps the smallest number of leading components whose eigenvalues
cover the requested fraction of total variance (the 1/(n-1) covariance
estimator). project() centers and rotates; there is no whitening, the
downstream diagonal GMM absorbs per-dimension scale.

The decomposition is computed from the SVD of the centered data matrix;
eigenvalues are singular values squared over (n-1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binio import Writer, read_file

PCA_MAGIC = b"MILA"

# Eigenvalues below max * _RANK_RTOL count as zero when ranking energy.
_RANK_RTOL = 1e-12


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray = field(repr=False)      # (d, D), orthonormal rows
    eigenvalues: np.ndarray                    # (d,), descending
    energy_kept: float

    def __post_init__(self):
        mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        basis = np.ascontiguousarray(self.basis, dtype=np.float64)
        eig = np.ascontiguousarray(self.eigenvalues, dtype=np.float64)
        if mean.ndim != 1 or basis.ndim != 2 or basis.shape[1] != mean.shape[0]:
            raise ValueError(f"inconsistent PCA shapes: mean {mean.shape}, basis {basis.shape}")
        if eig.shape != (basis.shape[0],):
            raise ValueError(f"expected {basis.shape[0]} eigenvalues, got {eig.shape}")
        if (eig < 0).any() or (np.diff(eig) > 0).any():
            raise ValueError("eigenvalues must be non-negative and sorted descending")
        gram = basis @ basis.T
        if np.abs(gram - np.eye(basis.shape[0])).max() > 1e-8:
            raise ValueError("basis rows are not orthonormal within 1e-8")
        if not 0.0 < self.energy_kept <= 1.0:
            raise ValueError(f"energy_kept must be in (0, 1], got {self.energy_kept}")
        for arr in (mean, basis, eig):
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "eigenvalues", eig)

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def output_dim(self) -> int:
        return self.basis.shape[0]


def fit(points: np.ndarray, energy: float) -> PcaModel:
    """Fit PCA keeping the smallest d with cumulative energy >= `energy`."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"points must be (n, D), got shape {pts.shape}")
    if pts.shape[0] < 2:
        raise ValueError(f"need at least 2 points, got {pts.shape[0]}")
    if not np.isfinite(pts).all():
        raise ValueError("points contain non-finite values")
    if not 0.0 < energy <= 1.0:
        raise ValueError(f"energy must be in (0, 1], got {energy}")

    mean = pts.mean(axis=0)
    centered = pts - mean
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    eigenvalues = (singular * singular) / (pts.shape[0] - 1)
    eigenvalues[eigenvalues < eigenvalues.max(initial=0.0) * _RANK_RTOL] = 0.0

    cum = np.cumsum(eigenvalues)
    if cum[-1] <= 0.0:
        raise ValueError("zero covariance: all points are identical")
    ratios = cum / cum[-1]
    d = int(np.searchsorted(ratios, energy - 1e-15)) + 1
    d = min(d, int(np.count_nonzero(eigenvalues)))  # never keep zero-variance axes

    return PcaModel(mean=mean, basis=vt[:d], eigenvalues=eigenvalues[:d],
                    energy_kept=float(energy))


def project(model: PcaModel, points: np.ndarray) -> np.ndarray:
    """Map (n, D) points to (n, d) PCA coordinates: (x - mean) @ basis^T."""
    pts = np.asarray(points, dtype=np.float64)
    squeeze = pts.ndim == 1
    if squeeze:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != model.input_dim:
        raise ValueError(f"points must have dimension {model.input_dim}, "
                         f"got shape {np.asarray(points).shape}")
    out = (pts - model.mean) @ model.basis.T
    return out[0] if squeeze else out


def save_model(model: PcaModel, path) -> None:
    w = Writer(PCA_MAGIC)
    w.u32(model.input_dim)
    w.u32(model.output_dim)
    w.f64(model.energy_kept)
    w.f64_array(model.mean)
    w.f64_array(model.eigenvalues)
    w.f64_array(model.basis)
    w.save(path)


def load_model(path) -> PcaModel:
    r = read_file(path, PCA_MAGIC)
    dim = r.u32("input dimension D")
    d = r.u32("output dimension d")
    if dim < 1 or d < 1 or d > dim:
        raise r.error(f"malformed header: D={dim}, d={d}")
    energy = r.f64("energy")
    mean = r.f64_array(dim, "mean")
    eigenvalues = r.f64_array(d, "eigenvalues")
    basis = r.f64_array(d * dim, "basis").reshape(d, dim)
    r.expect_eof()
    return PcaModel(mean=mean, basis=basis, eigenvalues=eigenvalues, energy_kept=energy)
