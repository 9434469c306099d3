"""Independent reference implementations used to check the package.

Everything here is deliberately naive: python loops, scalar math, direct
textbook formulas. None of it shares code with the package so that an
agreement between the two is evidence, not tautology.
"""

from __future__ import annotations

import math

import numpy as np


def gaussian_logpdf_1d(x: float, mean: float, std: float) -> float:
    z = (x - mean) / std
    return -0.5 * math.log(2.0 * math.pi) - math.log(std) - 0.5 * z * z


def soft_assign_point(weights, means, stds, x) -> list[float]:
    """Posterior over components for one point, scalar log arithmetic."""
    logs = []
    for k in range(len(weights)):
        acc = math.log(weights[k])
        for d in range(len(x)):
            acc += gaussian_logpdf_1d(float(x[d]), float(means[k][d]), float(stds[k][d]))
        logs.append(acc)
    top = max(logs)
    unnorm = [math.exp(v - top) for v in logs]
    total = sum(unnorm)
    return [v / total for v in unnorm]


def log_likelihood_naive(weights, means, stds, points) -> float:
    """Direct density sums, no log-sum-exp; underflows for extreme data."""
    total = 0.0
    for x in points:
        mix = 0.0
        for k in range(len(weights)):
            dens = weights[k]
            for d in range(len(x)):
                dens *= math.exp(gaussian_logpdf_1d(float(x[d]), float(means[k][d]),
                                                    float(stds[k][d])))
            mix += dens
        total += math.log(mix)
    return total


def fisher_encode_naive(weights, means, stds, points) -> np.ndarray:
    """Per-point, per-component, per-dimension triple loop of the encoding."""
    num_comp, dim = np.shape(means)
    f_mu = np.zeros((num_comp, dim))
    f_sigma = np.zeros((num_comp, dim))
    for x in points:
        gamma = soft_assign_point(weights, means, stds, x)
        for k in range(num_comp):
            for d in range(dim):
                z = (float(x[d]) - float(means[k][d])) / float(stds[k][d])
                f_mu[k, d] += gamma[k] * z / math.sqrt(float(weights[k]))
                f_sigma[k, d] += gamma[k] * (z * z - 1.0) / math.sqrt(2.0 * float(weights[k]))
    return np.concatenate([f_mu.ravel(), f_sigma.ravel()])


def knn_full_sort(pool_features, query, k: int) -> list[tuple[int, float]]:
    """All distances, full sort by (squared distance, index)."""
    d2 = []
    for i, row in enumerate(pool_features):
        acc = 0.0
        for a, b in zip(row, query):
            diff = float(a) - float(b)
            acc += diff * diff
        d2.append((acc, i))
    d2.sort()
    return [(i, math.sqrt(dist)) for dist, i in d2[:k]]


def target_neighbors_naive(points, classes, khat: int) -> list[list[int]]:
    """Per-point same-class distance sort."""
    out = []
    for i in range(len(points)):
        same = [j for j in range(len(points)) if classes[j] == classes[i] and j != i]
        ranked = knn_full_sort([points[j] for j in same], points[i], len(same))
        out.append([same[j] for j, _ in ranked[:khat]])
    return out


def lmnn_loss_triple_loop(w, points, classes, eta, alpha: float) -> float:
    """Direct evaluation over every (i, j, l) triple."""
    w = np.asarray(w, dtype=np.float64)

    def dist(a, b):
        v = w @ (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
        return float(v @ v)

    pull = 0.0
    push = 0.0
    for i in range(len(points)):
        for j in eta[i]:
            d_ij = dist(points[i], points[j])
            pull += d_ij
            for l in range(len(points)):
                if classes[l] == classes[i]:
                    continue
                hinge = 1.0 + d_ij - dist(points[i], points[l])
                if hinge > 0.0:
                    push += hinge
    return pull + alpha * push


def min_hinge_gap(w, points, classes, eta) -> float:
    """Smallest |hinge argument| over all triples (kink proximity probe)."""
    w = np.asarray(w, dtype=np.float64)

    def dist(a, b):
        v = w @ (np.asarray(a) - np.asarray(b))
        return float(v @ v)

    gap = math.inf
    for i in range(len(points)):
        for j in eta[i]:
            d_ij = dist(points[i], points[j])
            for l in range(len(points)):
                if classes[l] != classes[i]:
                    gap = min(gap, abs(1.0 + d_ij - dist(points[i], points[l])))
    return gap


def central_difference_gradient(fn, w, h: float = 1e-5) -> np.ndarray:
    """Entrywise (f(w+h) - f(w-h)) / 2h."""
    w = np.asarray(w, dtype=np.float64)
    grad = np.zeros_like(w)
    for idx in np.ndindex(*w.shape):
        bumped = w.copy()
        bumped[idx] += h
        hi = fn(bumped)
        bumped[idx] -= 2.0 * h
        lo = fn(bumped)
        grad[idx] = (hi - lo) / (2.0 * h)
    return grad


def average_precision_enumeration(scores, positives) -> float:
    """Brute-force PR walk: area under the interpolated envelope.

    Computed as the recall-step integral, a different formulation from a
    mean over positive ranks.
    """
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-float(scores[i]), i))
    total_pos = sum(1 for p in positives if p)
    precision, recall = [], []
    tp = 0
    for rank, i in enumerate(order, start=1):
        if positives[i]:
            tp += 1
        precision.append(tp / rank)
        recall.append(tp / total_pos)
    envelope = [max(precision[r:]) for r in range(n)]
    area = 0.0
    prev_recall = 0.0
    for r in range(n):
        if recall[r] > prev_recall:
            area += (recall[r] - prev_recall) * envelope[r]
            prev_recall = recall[r]
    return area


def average_precision_11pt(scores, positives) -> float:
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-float(scores[i]), i))
    total_pos = sum(1 for p in positives if p)
    precision, recall = [], []
    tp = 0
    for rank, i in enumerate(order, start=1):
        if positives[i]:
            tp += 1
        precision.append(tp / rank)
        recall.append(tp / total_pos)
    samples = []
    for step in range(11):
        level = step / 10.0
        best = 0.0
        for r in range(n):
            if recall[r] >= level - 1e-12:
                best = max(best, max(precision[r:]))
                break
        samples.append(best)
    return sum(samples) / 11.0


def pca_eigh_oracle(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(mean, descending eigenvalues, eigenvectors as rows) of the explicit
    1/(n-1) covariance via a symmetric eigen-solve."""
    pts = np.asarray(points, dtype=np.float64)
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / (pts.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    return mean, vals[order], vecs[:, order].T
