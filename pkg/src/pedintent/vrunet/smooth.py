"""Cubic least-squares smoothing of predicted trajectories."""
from __future__ import annotations

import numpy as np


def smooth_trajectory(centers, degree: int = 3) -> tuple[np.ndarray, bool]:
    """Fit x(t), y(t) with a cubic over t = 1..H and resample at the same t.

    Returns ``(smoothed, fitted)``.  With fewer than ``degree + 1`` points the
    input is returned unchanged and ``fitted`` is False.
    """
    c = np.asarray(centers, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != 2:
        raise ValueError(f"expected (H, 2) centres, got {c.shape}")
    n = c.shape[0]
    if n < degree + 1:
        return c.copy(), False
    t = np.arange(1, n + 1, dtype=np.float64)
    # scaled abscissa keeps the Vandermonde matrix well conditioned
    u = (t - t.mean()) / (t.max() - t.mean())
    v = np.vander(u, degree + 1)
    q, _ = np.linalg.qr(v)
    return q @ (q.T @ c), True


def smooth_batch(trajs: np.ndarray) -> np.ndarray:
    return np.stack([smooth_trajectory(t)[0] for t in trajs]) if len(trajs) else np.asarray(trajs, float)
