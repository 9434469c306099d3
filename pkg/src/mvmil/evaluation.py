"""Ranking metrics: per-class average precision and its mean.

average_precision sorts by descending score with ties broken by original
index, which makes every result reproducible and lets exhaustive oracles
check it rank by rank. Two conventions are offered: the all-points
interpolated area (default) and the historical 11-point sample.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .datamodel import ScoreMatrix

AP_MODES = ("all-points", "11-point")


@dataclass(frozen=True)
class PrCurve:
    """Raw precision/recall per rank plus the summary AP for one class."""

    recall: np.ndarray
    precision: np.ndarray
    ap: float
    mode: str

    def __post_init__(self):
        r = np.asarray(self.recall, dtype=np.float64)
        p = np.asarray(self.precision, dtype=np.float64)
        if r.shape != p.shape or r.ndim != 1:
            raise ValueError(f"recall and precision must be equal-length vectors, "
                             f"got {r.shape} and {p.shape}")
        if (np.diff(r) < 0).any():
            raise ValueError("recall must be non-decreasing")
        if ((p < 0) | (p > 1)).any() or not 0.0 <= self.ap <= 1.0:
            raise ValueError("precision and ap must lie in [0, 1]")
        if self.mode not in AP_MODES:
            raise ValueError(f"mode must be one of {AP_MODES}, got {self.mode!r}")
        object.__setattr__(self, "recall", r)
        object.__setattr__(self, "precision", p)


def average_precision(scores: np.ndarray, positives: np.ndarray,
                      mode: str = "all-points") -> PrCurve:
    """AP of one ranking: higher score means ranked earlier.

    Ties are broken by the original index (earlier row wins). all-points
    integrates the interpolated precision envelope over recall; 11-point
    averages the envelope at recall {0, 0.1, ..., 1.0}.
    """
    if mode not in AP_MODES:
        raise ValueError(f"mode must be one of {AP_MODES}, got {mode!r}")
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    if s.ndim != 1 or s.shape != pos.shape:
        raise ValueError(f"scores and positives must be equal-length vectors, "
                         f"got {s.shape} and {pos.shape}")
    total_pos = int(pos.sum())
    if total_pos == 0:
        raise ValueError("average precision is undefined without positives")

    order = np.lexsort((np.arange(s.shape[0]), -s))
    hits = pos[order]
    tp = np.cumsum(hits)
    recall = tp / total_pos
    precision = tp / np.arange(1, s.shape[0] + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]

    if mode == "all-points":
        # Each positive advances recall by exactly 1/P, so the area under
        # the interpolated envelope is the mean envelope value at the
        # positive ranks.
        ap = float(envelope[hits].sum() / total_pos)
    else:
        grid = np.linspace(0.0, 1.0, 11)
        samples = []
        for r in grid:
            reachable = recall >= r - 1e-12
            samples.append(float(envelope[reachable].max()) if reachable.any() else 0.0)
        ap = float(np.mean(samples))
    return PrCurve(recall=recall, precision=precision, ap=ap, mode=mode)


def mean_average_precision(scores, labels: np.ndarray,
                           mode: str = "all-points") -> tuple[list[float | None], float]:
    """Per-class APs and their unweighted mean.

    A class without a single positive bag has no defined AP; it is skipped
    with a warning and excluded from the mean. Accepts a ScoreMatrix or a
    plain (n, C) array.
    """
    mat = scores.scores if isinstance(scores, ScoreMatrix) else np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if mat.ndim != 2 or y.shape != mat.shape:
        raise ValueError(f"scores and labels must both be (n, C), got "
                         f"{mat.shape} and {y.shape}")
    aps: list[float | None] = []
    for c in range(mat.shape[1]):
        if not y[:, c].any():
            warnings.warn(f"class {c} has no positive bags; excluded from mAP")
            aps.append(None)
        else:
            aps.append(average_precision(mat[:, c], y[:, c] == 1, mode).ap)
    included = [a for a in aps if a is not None]
    if not included:
        raise ValueError("no class has a positive bag; mAP undefined")
    return aps, float(np.mean(included))


def format_report(aps: list[float | None], map_value: float, class_names) -> str:
    """Fixed-width text table of per-class AP and mAP, 4 decimal places."""
    names = list(class_names)
    if len(names) != len(aps):
        raise ValueError(f"{len(names)} class names for {len(aps)} APs")
    width = max(len("class"), max(len(n) for n in names), len("mAP"))
    lines = [f"{'class':<{width}}  AP"]
    for name, ap in zip(names, aps):
        lines.append(f"{name:<{width}}  " + ("n/a" if ap is None else f"{ap:.4f}"))
    lines.append(f"{'mAP':<{width}}  {map_value:.4f}")
    return "\n".join(lines) + "\n"
