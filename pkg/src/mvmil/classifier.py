"""One-vs-all linear classifiers over bag-level Fisher vectors.

Two training criteria share the same affine score model s = Wx + b:

  hinge   per-class L2-regularized max-margin on +/-1 targets,
          (1/n) sum_i [1 - t_i s_i]_+ + reg ||w||^2
  square  multi-label regression of the score rows onto normalized
          probability targets p_i = y_i / ||y_i||_1,
          (1/n) sum_i sum_j (s_ij - p_ij)^2 + reg ||W||^2_F

Both are minimized by deterministic full-batch gradient descent with a
fixed step; a hinge argument at exactly zero contributes nothing. A class
with no positives (or no negatives) gets a constant classifier and a
warning instead of an error.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .binio import Writer, read_file
from .datamodel import ScoreMatrix

CLASSIFIER_MAGIC = b"MILC"

LOSS_TAGS = ("hinge", "square")


@dataclass(frozen=True)
class LinearClassifierSet:
    """Per-class affine scorers: weights (C, F), biases (C,)."""

    weights: np.ndarray = field(repr=False)
    biases: np.ndarray
    trained_loss: str

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        b = np.ascontiguousarray(self.biases, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"need weights (C, F) and biases (C,), got "
                             f"{w.shape} and {b.shape}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("classifier parameters contain non-finite values")
        if self.trained_loss not in LOSS_TAGS:
            raise ValueError(f"unknown loss tag {self.trained_loss!r}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class ClassifierConfig:
    loss: str = "hinge"
    reg: float = 1e-4
    lr: float = 0.1
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSS_TAGS:
            raise ValueError(f"loss must be one of {LOSS_TAGS}, got {self.loss!r}")
        if self.reg < 0 or self.lr <= 0 or self.epochs < 1:
            raise ValueError(f"invalid config: reg={self.reg}, lr={self.lr}, "
                             f"epochs={self.epochs}")


def probability_targets(labels: np.ndarray) -> np.ndarray:
    """Row-normalized targets p_i = y_i / ||y_i||_1; all-zero rows stay zero."""
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError(f"labels must be (n, C), got shape {y.shape}")
    sums = y.sum(axis=1, keepdims=True)
    return np.divide(y, sums, out=np.zeros_like(y), where=sums > 0)


def square_loss(predicted: np.ndarray, targets: np.ndarray) -> float:
    """(1/n) sum of squared entrywise differences."""
    p_hat = np.asarray(predicted, dtype=np.float64)
    p = np.asarray(targets, dtype=np.float64)
    if p_hat.shape != p.shape or p_hat.ndim != 2:
        raise ValueError(f"shape mismatch: predicted {p_hat.shape}, targets {p.shape}")
    return float(((p_hat - p) ** 2).sum() / p_hat.shape[0])


def square_loss_gradient(predicted: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """d square_loss / d predicted = 2 (predicted - targets) / n."""
    p_hat = np.asarray(predicted, dtype=np.float64)
    p = np.asarray(targets, dtype=np.float64)
    if p_hat.shape != p.shape or p_hat.ndim != 2:
        raise ValueError(f"shape mismatch: predicted {p_hat.shape}, targets {p.shape}")
    return 2.0 * (p_hat - p) / p_hat.shape[0]


def fit_binary_hinge(features: np.ndarray, targets: np.ndarray,
                     cfg: ClassifierConfig) -> tuple[np.ndarray, float, list[float]]:
    """Gradient descent on the regularized hinge for one class.

    targets are +/-1. Returns (w, b, loss trace); the trace records the
    objective after every epoch, starting at the zero initializer.
    """
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    n = x.shape[0]
    if x.ndim != 2 or t.shape != (n,):
        raise ValueError(f"features (n, F) and targets (n,) required, got "
                         f"{x.shape} and {t.shape}")
    w = np.zeros(x.shape[1])
    b = 0.0

    def loss(w, b):
        margins = 1.0 - t * (x @ w + b)
        return float(np.maximum(margins, 0.0).sum() / n + cfg.reg * (w @ w))

    trace = [loss(w, b)]
    for _ in range(cfg.epochs):
        active = (1.0 - t * (x @ w + b)) > 0.0
        grad_w = -(t[active] @ x[active]) / n + 2.0 * cfg.reg * w
        grad_b = -t[active].sum() / n
        w = w - cfg.lr * grad_w
        b = b - cfg.lr * grad_b
        trace.append(loss(w, b))
    return w, float(b), trace


def fit_multilabel_square(features: np.ndarray, prob_targets: np.ndarray,
                          cfg: ClassifierConfig) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Gradient descent on the regularized square loss, all classes jointly.

    prob_targets rows follow probability_targets. Returns (weights (C, F),
    biases (C,), loss trace).
    """
    x = np.asarray(features, dtype=np.float64)
    p = np.asarray(prob_targets, dtype=np.float64)
    n = x.shape[0]
    if x.ndim != 2 or p.ndim != 2 or p.shape[0] != n:
        raise ValueError(f"features (n, F) and targets (n, C) required, got "
                         f"{x.shape} and {p.shape}")
    w = np.zeros((p.shape[1], x.shape[1]))
    b = np.zeros(p.shape[1])

    def loss(w, b):
        return square_loss(x @ w.T + b, p) + cfg.reg * float((w * w).sum())

    trace = [loss(w, b)]
    for _ in range(cfg.epochs):
        resid = square_loss_gradient(x @ w.T + b, p)
        w = w - cfg.lr * (resid.T @ x + 2.0 * cfg.reg * w)
        b = b - cfg.lr * resid.sum(axis=0)
        trace.append(loss(w, b))
    return w, b, trace


def train_ova(features: np.ndarray, labels: np.ndarray,
              cfg: ClassifierConfig | None = None) -> LinearClassifierSet:
    """One classifier per class over shared features.

    A class whose labels are all 0 (or all 1) cannot be discriminated;
    its classifier becomes the constant -1 (or +1) and a warning is
    emitted. Deterministic: zero initialization, fixed step, fixed order.
    """
    cfg = cfg or ClassifierConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.ndim != 2 or y.shape[0] != x.shape[0]:
        raise ValueError(f"features (n, F) and labels (n, C) required, got "
                         f"{x.shape} and {y.shape}")
    if x.shape[0] < 2:
        raise ValueError(f"need at least 2 training bags, got {x.shape[0]}")

    num_classes = y.shape[1]
    weights = np.zeros((num_classes, x.shape[1]))
    biases = np.zeros(num_classes)
    positives = y.sum(axis=0)
    degenerate = (positives == 0) | (positives == y.shape[0])

    if cfg.loss == "square":
        weights, biases, _ = fit_multilabel_square(x, probability_targets(y), cfg)
    for c in range(num_classes):
        if degenerate[c]:
            constant = 1.0 if positives[c] else -1.0
            warnings.warn(f"class {c} has no {'negatives' if positives[c] else 'positives'}; "
                          f"using constant classifier {constant:+.0f}")
            weights[c] = 0.0
            biases[c] = constant
        elif cfg.loss == "hinge":
            targets = 2.0 * y[:, c].astype(np.float64) - 1.0
            weights[c], biases[c], _ = fit_binary_hinge(x, targets, cfg)
    return LinearClassifierSet(weights=weights, biases=biases, trained_loss=cfg.loss)


def predict(model: LinearClassifierSet, features: np.ndarray,
            bag_ids=None) -> ScoreMatrix:
    """Raw affine scores x W^T + b, one row per feature row."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.feature_dim:
        raise ValueError(f"features must have dimension {model.feature_dim}, "
                         f"got shape {np.asarray(features).shape}")
    ids = tuple(str(i) for i in range(x.shape[0])) if bag_ids is None else tuple(bag_ids)
    return ScoreMatrix(bag_ids=ids, scores=x @ model.weights.T + model.biases)


def save_model(model: LinearClassifierSet, path) -> None:
    w = Writer(CLASSIFIER_MAGIC)
    w.u32(model.num_classes)
    w.u32(model.feature_dim)
    w.f64_array(model.weights)
    w.f64_array(model.biases)
    tag = model.trained_loss.encode("utf-8")
    w.u16(len(tag))
    w.bytes_(tag)
    w.save(path)


def load_model(path) -> LinearClassifierSet:
    r = read_file(path, CLASSIFIER_MAGIC)
    num_classes = r.u32("class count C")
    dim = r.u32("feature dimension F")
    if num_classes < 1 or dim < 1:
        raise r.error(f"malformed header: C={num_classes}, F={dim}")
    weights = r.f64_array(num_classes * dim, "weights").reshape(num_classes, dim)
    biases = r.f64_array(num_classes, "biases")
    tag_off = r.offset
    tag = r.utf8(r.u16("loss tag length"), "loss tag")
    if tag not in LOSS_TAGS:
        raise r.error(f"unknown loss tag {tag!r}", offset=tag_off)
    r.expect_eof()
    return LinearClassifierSet(weights=weights, biases=biases, trained_loss=tag)
