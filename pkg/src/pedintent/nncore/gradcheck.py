"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def numeric_grad(fn, t: Tensor, step: float = 1e-3, indices=None) -> np.ndarray:
    """d fn() / d t by central differences; fn must return a scalar Tensor."""
    flat = t.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(len(idx) if indices is not None else flat.size)
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(fn().data)
        flat[i] = orig - step
        fm = float(fn().data)
        flat[i] = orig
        out[k] = (fp - fm) / (2 * step)
    return out


def check(fn, tensors: list[Tensor], step: float = 1e-3, max_entries: int | None = None, rng=None) -> float:
    """Worst relative error between analytic and numeric gradients.

    With ``max_entries`` set, each tensor is probed at a random subset of
    that many entries (full models have too many parameters to sweep).
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        if max_entries is not None and t.data.size > max_entries:
            idx = np.sort(rng.choice(t.data.size, size=max_entries, replace=False))
        else:
            idx = None
        num = numeric_grad(fn, t, step, idx)
        ana = analytic if idx is None else analytic[idx]
        worst = max(worst, rel_error(ana, num))
    return worst
