"""Differentiable layer operations used by VRUNet and the 1D ResNet.

Layouts are channels-last: images are ``[B, H, W, C]`` (batch optional),
kernels ``[kh, kw, Cin, Cout]``.  Convolutions and pooling use "same"
padding followed by stride subsampling, so every spatial output size is
``ceil(in / stride)``.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, _sigmoid, as_tensor, matmul


class ShapeError(ValueError):
    pass


def out_size(n: int, stride: int) -> int:
    return -(-n // stride)


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else tuple(v)


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    b, _, _, c = xp.shape
    s0, s1, s2, s3 = xp.strides
    return as_strided(xp, shape=(b, ho, wo, kh, kw, c), strides=(s0, s1 * sh, s2 * sw, s1, s2, s3),
                      writeable=False)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=1) -> Tensor:
    """Cross-correlation with zero "same" padding, sampled every ``stride`` cells."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects [B,H,W,C] input and [kh,kw,Cin,Cout] kernel, got {x.shape}, {kernel.shape}")
    b, h, w, c = x.shape
    kh, kw, cin, cout = kernel.shape
    if cin != c:
        raise ShapeError(f"channel mismatch: input has {c}, kernel expects {cin}")
    sh, sw = _pair(stride)
    ho, wo = out_size(h, sh), out_size(w, sw)
    pt, pl = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pt, kh - 1 - pt), (pl, kw - 1 - pl), (0, 0)))
    cols = _windows(xp, kh, kw, sh, sw, ho, wo).reshape(b * ho * wo, kh * kw * c)
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out = cols @ kmat
    if bias is not None:
        out += bias.data
    out = out.reshape(b, ho, wo, cout)

    def backward(g):
        g2 = g.reshape(b * ho * wo, cout)
        if kernel.requires_grad:
            kernel._accum((cols.T @ g2).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias._accum(g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ kmat.T).reshape(b, ho, wo, kh, kw, c)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + sh * ho:sh, j:j + sw * wo:sw, :] += dcols[:, :, :, i, j, :]
            x._accum(dxp[:, pt:pt + h, pl:pl + w, :])

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    res = Tensor._make(out, parents, backward)
    return res.reshape(res.shape[1:]) if squeeze else res


def maxpool2d(x: Tensor, size=2, stride=1) -> Tensor:
    """Windowed max with "same" (-inf) padding; ties route to the first index."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape((1,) + x.shape)
    b, h, w, c = x.shape
    kh, kw = _pair(size)
    sh, sw = _pair(stride)
    ho, wo = out_size(h, sh), out_size(w, sw)
    pt, pl = (kh - 1) // 2, (kw - 1) // 2
    pb = max((ho - 1) * sh + kh - h - pt, 0)
    pr = max((wo - 1) * sw + kw - w - pl, 0)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=-np.inf)
    win = _windows(xp, kh, kw, sh, sw, ho, wo).reshape(b, ho, wo, kh * kw, c)
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def backward(g):
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + sh * ho:sh, j:j + sw * wo:sw, :] += g * (arg == i * kw + j)
        x._accum(dxp[:, pt:pt + h, pl:pl + w, :])

    res = Tensor._make(np.ascontiguousarray(out), (x,), backward)
    return res.reshape(res.shape[1:]) if squeeze else res


def fc(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weights)
    return out + bias if bias is not None else out


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step.

    ``w`` is ``[in + hidden, 4 * hidden]`` acting on ``concat(x, h)``; gate
    blocks are ordered (input, forget, cell, output).
    """
    hid = h.shape[-1]
    if w.shape != (x.shape[-1] + hid, 4 * hid) or b.shape != (4 * hid,):
        raise ShapeError(f"lstm params {w.shape}/{b.shape} inconsistent with input {x.shape[-1]}, hidden {hid}")
    xh = np.concatenate([x.data, h.data], axis=-1)
    z = xh @ w.data + b.data
    i = _sigmoid(z[..., :hid])
    f = _sigmoid(z[..., hid:2 * hid])
    gg = np.tanh(z[..., 2 * hid:3 * hid])
    o = _sigmoid(z[..., 3 * hid:])
    c_new = f * c.data + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc

    # both outputs share one backward; whichever arrives is folded in
    def grads(dh, dc):
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * c.data * f * (1.0 - f),
            dc * i * (1.0 - gg * gg),
            dh * tc * o * (1.0 - o),
        ], axis=-1)
        if w.requires_grad:
            w._accum(xh.T @ dz if xh.ndim == 2 else np.outer(xh, dz))
        if b.requires_grad:
            b._accum(dz.sum(axis=0) if dz.ndim == 2 else dz)
        if c.requires_grad:
            c._accum(dc * f)
        if x.requires_grad or h.requires_grad:
            dxh = dz @ w.data.T
            if x.requires_grad:
                x._accum(dxh[..., :x.shape[-1]])
            if h.requires_grad:
                h._accum(dxh[..., x.shape[-1]:])

    parents = (x, h, c, w, b)
    h_t = Tensor._make(h_new, parents, None)
    c_t = Tensor._make(c_new, parents, None)
    if h_t.requires_grad:
        # h' depends on c'; route h' gradient through a joint node so the
        # cell backward runs exactly once with both incoming gradients
        joint = _LSTMJoint(h_t, c_t, grads)
        h_t._backward = joint.from_h
        c_t._backward = joint.from_c
        c_t._parents = parents
        h_t._parents = (c_t,)
    return h_t, c_t


class _LSTMJoint:
    __slots__ = ("h", "c", "fn", "dh")

    def __init__(self, h, c, fn):
        self.h, self.c, self.fn = h, c, fn
        self.dh = None

    def from_h(self, g):
        # h' is visited before c' in reverse topological order
        self.dh = g
        self.c._accum(np.zeros_like(g))

    def from_c(self, g):
        dh = self.dh if self.dh is not None else np.zeros_like(g)
        self.fn(dh, g)
        self.dh = None


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_ce(logits: Tensor, labels, weight=1.0) -> Tensor:
    """Summed softmax cross-entropy.

    ``logits`` is ``[K]`` or ``[B, K]``; ``labels`` holds class indices.
    ``weight`` is a scalar or a per-class vector of length K.
    """
    single = logits.ndim == 1
    lg = logits.data[None] if single else logits.data
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    k = lg.shape[-1]
    if k < 2:
        raise ShapeError("softmax_ce needs at least 2 classes")
    if lab.shape[0] != lg.shape[0] or np.any(lab < 0) or np.any(lab >= k):
        raise ShapeError(f"labels {lab} invalid for logits of shape {logits.shape}")
    wt = np.asarray(weight, dtype=lg.dtype)
    per = wt[lab] if wt.ndim == 1 else np.full(lab.shape, wt, dtype=lg.dtype)
    z = lg - lg.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(lab.shape[0])
    nll = logsum - z[rows, lab]
    loss = np.asarray((per * nll).sum(), dtype=lg.dtype)

    def backward(g):
        p = np.exp(z - logsum[:, None])
        p[rows, lab] -= 1.0
        d = g * per[:, None] * p
        logits._accum(d[0] if single else d)

    return Tensor._make(loss, (logits,), backward)


def mse(pred: Tensor, target) -> Tensor:
    target = as_tensor(target, pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


def l2_penalty(params, lam: float) -> Tensor:
    params = list(params)
    if not params:
        return Tensor(0.0)
    total = None
    for p in params:
        s = (p * p).sum()
        total = s if total is None else total + s
    return total * lam


def he_bound(fan_in: int) -> float:
    return math.sqrt(6.0 / fan_in)
