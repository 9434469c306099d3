"""Diagonal-covariance Gaussian mixtures: EM estimation and soft assignment.

Model:  p(x) = sum_k w_k N(x | mu_k, diag(sigma_k^2))

E-step posteriors (soft assignments)
    gamma_j(k) = w_k N(x_j | mu_k, sigma_k^2) / sum_t w_t N(x_j | mu_t, sigma_t^2)
and M-step weighted-moment updates
    N_k = sum_j gamma_j(k),  w_k = N_k / n,
    mu_k = sum_j gamma_j(k) x_j / N_k,
    sigma_k^2 = sum_j gamma_j(k) x_j^2 / N_k - mu_k^2   (floored elementwise).

All density arithmetic is done in log space with log-sum-exp so that high
dimensions (hundreds of coordinates) do not underflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .binio import Writer, read_file

GMM_MAGIC = b"MILG"

DEFAULT_SIGMA_FLOOR = 1e-4

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmModel:
    """Mixture weights (K,), means (K, D) and diagonal stds (K, D)."""

    weights: np.ndarray
    means: np.ndarray = field(repr=False)
    stds: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        mu = np.ascontiguousarray(self.means, dtype=np.float64)
        sd = np.ascontiguousarray(self.stds, dtype=np.float64)
        if w.ndim != 1 or mu.ndim != 2 or sd.shape != mu.shape or mu.shape[0] != w.shape[0]:
            raise ValueError(f"inconsistent GMM shapes: weights {w.shape}, "
                             f"means {mu.shape}, stds {sd.shape}")
        if not (np.isfinite(w).all() and np.isfinite(mu).all() and np.isfinite(sd).all()):
            raise ValueError("GMM parameters contain non-finite values")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must sum to 1 within 1e-12, sum={w.sum()!r}")
        if (w <= 0).any():
            raise ValueError("mixture weights must be strictly positive")
        if (sd <= 0).any():
            raise ValueError("stds must be strictly positive")
        for arr in (w, mu, sd):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", sd)

    @property
    def num_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class Responsibilities:
    """Posterior assignment matrix gamma, shape (n, K); rows sum to 1."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.ascontiguousarray(self.gamma, dtype=np.float64)
        if g.ndim != 2:
            raise ValueError(f"gamma must be (n, K), got shape {g.shape}")
        if ((g < 0) | (g > 1)).any():
            raise ValueError("gamma entries must lie in [0, 1]")
        if np.abs(g.sum(axis=1) - 1.0).max() > 1e-10:
            raise ValueError("gamma rows must sum to 1 within 1e-10")
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)


@dataclass
class EmConfig:
    max_iter: int = 100
    tol: float = 1e-6
    seed: int = 0
    sigma_floor: float = DEFAULT_SIGMA_FLOOR


def _check_points(model: GmmModel, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != model.dim:
        raise ValueError(f"points must be (n, {model.dim}), got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("points contain non-finite values")
    return pts


def _log_joint(weights, means, stds, points) -> np.ndarray:
    """(n, K) matrix of log w_k + log N(x_j | mu_k, sigma_k^2).

    The Mahalanobis term is expanded into three matrix products so no
    (n, K, D) temporary is materialised.
    """
    inv_var = 1.0 / (stds * stds)                             # (K, D)
    log_det = 2.0 * np.log(stds).sum(axis=1)                  # (K,)
    maha = (points * points) @ inv_var.T \
        - 2.0 * points @ (means * inv_var).T \
        + ((means * means) * inv_var).sum(axis=1)             # (n, K)
    dim = points.shape[1]
    return np.log(weights) - 0.5 * (dim * _LOG_2PI + log_det + maha)


def soft_assign(model: GmmModel, points: np.ndarray) -> Responsibilities:
    """Posterior probabilities of each point under each component."""
    pts = _check_points(model, points)
    lj = _log_joint(model.weights, model.means, model.stds, pts)
    # max-shifted exponentials with an explicit row normalization: when
    # |lj| is huge (points far outside every component) the float noise in
    # lj is absolute, and exp(lj - logsumexp(lj)) alone can miss the
    # rows-sum-to-1 contract
    unnorm = np.exp(lj - lj.max(axis=1, keepdims=True))
    return Responsibilities(gamma=unnorm / unnorm.sum(axis=1, keepdims=True))


def log_likelihood(model: GmmModel, points: np.ndarray) -> float:
    """sum_j log sum_k w_k N(x_j | mu_k, sigma_k^2), log-sum-exp stabilised."""
    pts = _check_points(model, points)
    lj = _log_joint(model.weights, model.means, model.stds, pts)
    return float(logsumexp(lj, axis=1).sum())


def _kmeanspp_centers(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))  # duplicates everywhere; any point works
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def fit_em(points: np.ndarray, num_components: int,
           cfg: EmConfig | None = None) -> tuple[GmmModel, list[float]]:
    """Fit a diagonal GMM by EM; returns (model, log-likelihood trace).

    Initialisation is k-means++-style center seeding with cfg.seed, global
    per-dimension stds and uniform weights. Stops after cfg.max_iter
    iterations or when the relative log-likelihood improvement drops below
    cfg.tol. The trace holds one entry per E-step.
    """
    cfg = cfg or EmConfig()
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"points must be (n, D), got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("points contain non-finite values")
    n, dim = pts.shape
    if num_components < 1:
        raise ValueError(f"need at least one component, got {num_components}")
    if n < num_components:
        raise ValueError(f"need n >= K points, got n={n} < K={num_components}")
    if num_components > 1 and (pts == pts[0]).all():
        raise ValueError("all points identical: cannot fit more than one component")

    rng = np.random.default_rng(cfg.seed)
    means = _kmeanspp_centers(pts, num_components, rng)
    global_std = np.maximum(pts.std(axis=0), cfg.sigma_floor)
    stds = np.tile(global_std, (num_components, 1))
    weights = np.full(num_components, 1.0 / num_components)

    trace: list[float] = []
    for _ in range(cfg.max_iter):
        lj = _log_joint(weights, means, stds, pts)
        row_lse = logsumexp(lj, axis=1, keepdims=True)
        ll = float(row_lse.sum())
        trace.append(ll)
        if len(trace) >= 2:
            prev = trace[-2]
            if (ll - prev) < cfg.tol * abs(prev):
                break

        gamma = np.exp(lj - row_lse)
        nk = np.maximum(gamma.sum(axis=0), 1e-12)
        weights = nk / nk.sum()
        means = (gamma.T @ pts) / nk[:, None]
        ex2 = (gamma.T @ (pts * pts)) / nk[:, None]
        var = np.maximum(ex2 - means * means, 0.0)
        stds = np.maximum(np.sqrt(var), cfg.sigma_floor)

    model = GmmModel(weights=weights, means=means, stds=stds)
    return model, trace


# ---------------------------------------------------------------------------
# Serialization ("MILG"): K, D, then weights, means, stds as float64 LE.
# ---------------------------------------------------------------------------


def save_model(model: GmmModel, path) -> None:
    w = Writer(GMM_MAGIC)
    w.u32(model.num_components)
    w.u32(model.dim)
    w.f64_array(model.weights)
    w.f64_array(model.means)
    w.f64_array(model.stds)
    w.save(path)


def load_model(path) -> GmmModel:
    r = read_file(path, GMM_MAGIC)
    k = r.u32("component count K")
    dim = r.u32("dimension D")
    if k < 1 or dim < 1:
        raise r.error(f"malformed header: K={k}, D={dim}")
    weights = r.f64_array(k, "weights")
    means = r.f64_array(k * dim, "means").reshape(k, dim)
    stds = r.f64_array(k * dim, "stds").reshape(k, dim)
    r.expect_eof()
    return GmmModel(weights=weights, means=means, stds=stds)
