"""Joint objective: weighted per-task cross-entropy plus trajectory MSE."""
from __future__ import annotations

import numpy as np

from ..datapipe.schema import NUM_CLASSES, TASKS
from ..nncore import Tensor, l2_penalty, softmax_ce
from .config import LossWeights


def class_weights(labels: np.ndarray) -> dict[str, np.ndarray]:
    """Inverse-frequency weights per task, scaled so the mean sample weight is 1.

    Classes absent from ``labels`` get weight 1.
    """
    labels = np.asarray(labels).reshape(-1, len(TASKS))
    out = {}
    for j, t in enumerate(TASKS):
        k = NUM_CLASSES[t]
        counts = np.bincount(labels[:, j], minlength=k).astype(np.float64)
        present = counts > 0
        w = np.ones(k)
        w[present] = len(labels) / (present.sum() * counts[present])
        out[t] = w
    return out


def action_loss(logits: dict[str, Tensor], labels: np.ndarray, weights: LossWeights,
                class_w: dict[str, np.ndarray] | None = None) -> Tensor:
    """Sum over tasks of w_task times the (class-weighted) CE summed over instances."""
    labels = np.asarray(labels).reshape(-1, len(TASKS))
    total = None
    for j, t in enumerate(TASKS):
        w = getattr(weights, t)
        if w == 0:
            continue
        cw = class_w[t] if class_w is not None else 1.0
        term = softmax_ce(logits[t], labels[:, j], cw) * w
        total = term if total is None else total + term
    return total


def traj_loss(pred: Tensor, target: np.ndarray, params, lambda_reg: float) -> Tensor:
    """Per-instance MSE over the horizon x 2 normalized centres, summed over
    instances, plus ``lambda_reg`` times the squared norm of ``params``."""
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"trajectory shape {pred.shape} != target {target.shape}")
    diff = pred - Tensor(target)
    b = pred.shape[0]
    mse = (diff * diff).sum() * (1.0 / (pred.data.size / b))
    return mse + l2_penalty(params, lambda_reg) if lambda_reg > 0 else mse


def total_loss(action: Tensor, traj: Tensor, alpha: float = 1.0, beta: float = 1.0) -> Tensor:
    return action * alpha + traj * beta
