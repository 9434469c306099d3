"""Large-margin nearest-neighbor metric learning.

Learns a linear projection W so that, in the projected space, each point
sits close to its fixed same-class target neighbors while differently
labeled points are pushed a unit margin further away:

    loss(W) = sum_{i,j} eta_ij D(x_i, x_j)
            + alpha * sum_{i,j,l} eta_ij (1 - y_il) [1 + D(x_i,x_j) - D(x_i,x_l)]_+

with D(a, b) = ||W (a - b)||^2, eta_ij = 1 iff j is one of the khat nearest
same-class neighbors of i (fixed once, before training), and y_il = 1 iff
i and l share a class. Optimization is plain full-batch gradient descent;
a hinge argument at exactly zero contributes nothing to the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binio import Writer, read_file

METRIC_MAGIC = b"MILW"


@dataclass(frozen=True)
class MetricProjection:
    """The learned linear map, shape (d_out, d_in)."""

    w: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.ascontiguousarray(self.w, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError(f"projection must be a matrix, got shape {w.shape}")
        if not np.isfinite(w).all():
            raise ValueError("projection contains non-finite values")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def output_dim(self) -> int:
        return self.w.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class TargetNeighborSet:
    """eta[i] = indices of the target neighbors of point i (possibly empty)."""

    eta: tuple[np.ndarray, ...]
    khat: int


@dataclass
class LmnnConfig:
    alpha: float = 1.0
    khat: int = 10
    d_out: int = 128
    learning_rate: float = 1e-4
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.khat < 1:
            raise ValueError(f"khat must be >= 1, got {self.khat}")


def _check_points_classes(points, classes):
    pts = np.asarray(points, dtype=np.float64)
    cls = np.asarray(classes)
    if pts.ndim != 2 or cls.shape != (pts.shape[0],):
        raise ValueError(f"points (n, d) and classes (n,) required, got "
                         f"{pts.shape} and {cls.shape}")
    return pts, cls


def select_target_neighbors(points: np.ndarray, classes: np.ndarray,
                            khat: int) -> TargetNeighborSet:
    """khat nearest same-class neighbors of each point, ties to lower index.

    Distances are Euclidean in the input space; the sets are fixed here and
    never recomputed during training. A point whose class has no other
    member gets an empty set.
    """
    pts, cls = _check_points_classes(points, classes)
    if khat < 1:
        raise ValueError(f"khat must be >= 1, got {khat}")
    eta = []
    for i in range(pts.shape[0]):
        same = np.flatnonzero(cls == cls[i])
        same = same[same != i]
        if same.size == 0:
            eta.append(np.empty(0, dtype=np.int64))
            continue
        d2 = ((pts[same] - pts[i]) ** 2).sum(axis=1)
        order = np.lexsort((same, d2))[:khat]
        eta.append(same[order].astype(np.int64))
    return TargetNeighborSet(eta=tuple(eta), khat=khat)


def _pairwise_sq_dists(z: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Exact squared distances via direct differences, chunked over rows."""
    n = z.shape[0]
    out = np.empty((n, n))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = z[start:stop, None, :] - z[None, :, :]
        out[start:stop] = (diff * diff).sum(axis=-1)
    return out


def lmnn_loss(w: MetricProjection, points: np.ndarray, classes: np.ndarray,
              eta: TargetNeighborSet, alpha: float) -> float:
    pts, cls = _check_points_classes(points, classes)
    if pts.shape[1] != w.input_dim:
        raise ValueError(f"points have dimension {pts.shape[1]}, "
                         f"projection expects {w.input_dim}")
    z = pts @ w.w.T
    d2 = _pairwise_sq_dists(z)
    pull = 0.0
    push = 0.0
    for i, targets in enumerate(eta.eta):
        if targets.size == 0:
            continue
        pull += d2[i, targets].sum()
        impostors = np.flatnonzero(cls != cls[i])
        if impostors.size == 0:
            continue
        margins = 1.0 + d2[i, targets][:, None] - d2[i, impostors][None, :]
        push += margins[margins > 0.0].sum()
    return float(pull + alpha * push)


def lmnn_gradient(w: MetricProjection, points: np.ndarray, classes: np.ndarray,
                  eta: TargetNeighborSet, alpha: float) -> np.ndarray:
    """Analytic (sub)gradient of lmnn_loss with respect to W.

    Every pair contribution has the form 2 W (x_a - x_b)(x_a - x_b)^T, so
    the whole gradient is 2 W X^T L X for the graph Laplacian L of a signed
    pair-weight matrix: +1 per target pair, +alpha per active hinge on the
    (i, j) side and -alpha per active hinge on the (i, l) side.
    """
    pts, cls = _check_points_classes(points, classes)
    if pts.shape[1] != w.input_dim:
        raise ValueError(f"points have dimension {pts.shape[1]}, "
                         f"projection expects {w.input_dim}")
    n = pts.shape[0]
    z = pts @ w.w.T
    d2 = _pairwise_sq_dists(z)
    weights = np.zeros((n, n))
    for i, targets in enumerate(eta.eta):
        if targets.size == 0:
            continue
        weights[i, targets] += 1.0
        impostors = np.flatnonzero(cls != cls[i])
        if impostors.size == 0:
            continue
        active = (1.0 + d2[i, targets][:, None] - d2[i, impostors][None, :]) > 0.0
        weights[i, targets] += alpha * active.sum(axis=1)
        weights[i, impostors] -= alpha * active.sum(axis=0)
    lap = np.diag(weights.sum(axis=1) + weights.sum(axis=0)) - weights - weights.T
    return 2.0 * w.w @ (pts.T @ lap @ pts)


def initial_projection(points: np.ndarray, d_out: int) -> MetricProjection:
    """Training start point: the top-d_out covariance eigenvectors."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or not 1 <= d_out <= pts.shape[1]:
        raise ValueError(f"need (n, d_in) points with 1 <= d_out <= d_in, got "
                         f"shape {pts.shape} and d_out={d_out}")
    cov = np.atleast_2d(np.cov(pts, rowvar=False, ddof=1))
    _, vecs = np.linalg.eigh(cov)
    return MetricProjection(w=vecs[:, ::-1][:, :d_out].T.copy())


def train(points: np.ndarray, classes: np.ndarray,
          cfg: LmnnConfig) -> tuple[MetricProjection, list[float]]:
    """Full-batch gradient descent on the large-margin objective.

    W starts at the top-d_out PCA basis of the training points; target
    neighbors are selected once up front. Training stops early when the
    best loss has not improved by more than 1e-9 for 20 epochs, and the W
    with the lowest recorded loss is returned together with the loss trace.
    """
    pts, cls = _check_points_classes(points, classes)
    if pts.shape[0] < 2 or np.unique(cls).size < 2:
        raise ValueError("need at least two points from at least two classes")
    if cfg.d_out > pts.shape[1]:
        raise ValueError(f"d_out={cfg.d_out} exceeds input dimension {pts.shape[1]}")

    eta = select_target_neighbors(pts, cls, cfg.khat)
    proj = initial_projection(pts, cfg.d_out)
    best = proj
    best_loss = lmnn_loss(proj, pts, cls, eta, cfg.alpha)
    trace = [best_loss]
    stale = 0
    for _ in range(cfg.epochs):
        grad = lmnn_gradient(proj, pts, cls, eta, cfg.alpha)
        proj = MetricProjection(w=proj.w - cfg.learning_rate * grad)
        loss = lmnn_loss(proj, pts, cls, eta, cfg.alpha)
        trace.append(loss)
        if loss < best_loss - 1e-9:
            best, best_loss, stale = proj, loss, 0
        else:
            stale += 1
            if stale >= 20:
                break
    return best, trace


def project(w: MetricProjection, points: np.ndarray) -> np.ndarray:
    """Row-wise application of the projection."""
    pts = np.asarray(points, dtype=np.float64)
    squeeze = pts.ndim == 1
    if squeeze:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != w.input_dim:
        raise ValueError(f"points must have dimension {w.input_dim}, "
                         f"got shape {np.asarray(points).shape}")
    out = pts @ w.w.T
    return out[0] if squeeze else out


def save_model(proj: MetricProjection, path) -> None:
    w = Writer(METRIC_MAGIC)
    w.u32(proj.output_dim)
    w.u32(proj.input_dim)
    w.f64_array(proj.w)
    w.save(path)


def load_model(path) -> MetricProjection:
    r = read_file(path, METRIC_MAGIC)
    d_out = r.u32("output dimension")
    d_in = r.u32("input dimension")
    if d_out < 1 or d_in < 1:
        raise r.error(f"malformed header: d_out={d_out}, d_in={d_in}")
    payload = r.f64_array(d_out * d_in, "projection").reshape(d_out, d_in)
    r.expect_eof()
    return MetricProjection(w=payload)
