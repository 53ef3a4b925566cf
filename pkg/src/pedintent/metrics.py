"""Average precision and trajectory displacement errors."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

TASK_COLUMNS = ("GAIT", "ATTN", "DIST", "ORNT", "XNG")
REPORT_COLUMNS = ("Models",) + TASK_COLUMNS + ("ADE", "FDE")


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float


@dataclass(frozen=True)
class TrajError:
    ade: float
    fde: float


def pr_curve(scores, labels) -> list[PRPoint]:
    """Precision/recall at every distinct score, highest first.

    Tied scores enter the sweep together, so the curve does not depend on
    the order of tied items.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive label")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each block of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    return [PRPoint(float(s[i]), float(tp[i] / (tp[i] + fp[i])), float(tp[i] / n_pos)) for i in ends]


def average_precision(scores, labels) -> float:
    """All-points AP: sum of precision times recall increment over the sweep."""
    ap, prev_r = 0.0, 0.0
    for pt in pr_curve(scores, labels):
        ap += (pt.recall - prev_r) * pt.precision
        prev_r = pt.recall
    return ap


@dataclass
class MulticlassAP:
    per_class: dict[int, float]
    skipped: list[int]

    @property
    def macro(self) -> float:
        return float(np.mean(list(self.per_class.values()))) if self.per_class else math.nan


def multiclass_ap(probs, labels) -> MulticlassAP:
    """One-vs-rest AP for each class of a ``(n, K)`` score matrix.

    Classes with no positive label are skipped and listed in ``skipped``.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    per, skipped = {}, []
    for k in range(p.shape[1]):
        pos = y == k
        if not pos.any():
            skipped.append(k)
            continue
        per[k] = average_precision(p[:, k], pos)
    return MulticlassAP(per, skipped)


def task_ap(probs, labels) -> float:
    """AP as reported per task: positive-class AP for binary heads, macro one-vs-rest otherwise.

    NaN when the labels hold no positive (binary) or no class at all.
    """
    p = np.asarray(probs)
    if p.shape[1] == 2:
        pos = np.asarray(labels) == 1
        return average_precision(p[:, 1], pos) if pos.any() else math.nan
    return multiclass_ap(p, labels).macro


def displacement_errors(pred, gt) -> TrajError:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 2:
        raise ValueError(f"trajectories must both be (horizon, 2), got {p.shape} and {g.shape}")
    d = np.hypot(p[:, 0] - g[:, 0], p[:, 1] - g[:, 1])
    return TrajError(float(d.mean()), float(d[-1]))


def write_report(path, rows: dict[str, dict[str, float]]):
    """Write a Table-IV-style CSV: one row per model, AP columns in percent."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for model, vals in rows.items():
            w.writerow([model] + [_fmt(vals.get(c)) for c in REPORT_COLUMNS[1:]])


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "N/A"
    return f"{v:.4f}"
