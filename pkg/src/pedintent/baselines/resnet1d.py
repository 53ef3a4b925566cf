"""ResNet-10 with 1D convolutions over per-frame feature sequences.

Sequences are ``(B, N, F)``; time is the convolution axis and features are
channels.  A 1D conv is a 2D conv with a ``(k, 1)`` kernel on ``(B, N, 1, F)``.
Weighted layers: stem conv, 4 blocks x 2 convs, one FC per head (1x1
projection shortcuts are not counted).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nncore import (AdamState, Conv2d, Linear, Module, Tensor, adam_step, clip_grad_norm, no_grad, softmax,
                      softmax_ce)
from ..nncore import checkpoint


@dataclass(frozen=True)
class Resnet1DConfig:
    seq_len: int
    in_features: int
    heads: tuple[int, ...] = (2,)
    stem_channels: int = 32
    channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    kernel: int = 3

    def __post_init__(self):
        if self.seq_len < 1 or self.in_features < 1 or not self.heads or min(self.heads) < 2:
            raise ValueError("seq_len, in_features >= 1 and every head needs >= 2 classes")
        if len(self.channels) != 4:
            raise ValueError("ResNet-10 has exactly four stages")

    def to_dict(self) -> dict:
        return {"seq_len": self.seq_len, "in_features": self.in_features, "heads": list(self.heads),
                "stem_channels": self.stem_channels, "channels": list(self.channels), "kernel": self.kernel}

    @classmethod
    def from_dict(cls, d: dict) -> "Resnet1DConfig":
        return cls(d["seq_len"], d["in_features"], tuple(d["heads"]), d["stem_channels"], tuple(d["channels"]),
                   d["kernel"])


class Block(Module):
    def __init__(self, cin: int, cout: int, stride: int, k: int, rng, dtype):
        self.conv1 = Conv2d(cin, cout, (k, 1), (stride, 1), rng, dtype)
        self.conv2 = Conv2d(cout, cout, (k, 1), 1, rng, dtype)
        self.proj = Conv2d(cin, cout, (1, 1), (stride, 1), rng, dtype) if (stride != 1 or cin != cout) else None

    def __call__(self, x: Tensor) -> Tensor:
        y = self.conv2(self.conv1(x).relu())
        skip = self.proj(x) if self.proj is not None else x
        return (y + skip).relu()


class Resnet1D(Module):
    def __init__(self, cfg: Resnet1DConfig, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        k = cfg.kernel
        self.stem = Conv2d(cfg.in_features, cfg.stem_channels, (k, 1), 1, rng, dtype)
        chans = (cfg.stem_channels,) + tuple(cfg.channels)
        self.blocks = [Block(chans[i], chans[i + 1], 1 if i == 0 else 2, k, rng, dtype) for i in range(4)]
        self.heads = [Linear(cfg.channels[-1], n, rng, dtype) for n in cfg.heads]
        self.mean = np.zeros(cfg.in_features)
        self.std = np.ones(cfg.in_features)

    @property
    def dtype(self):
        return self.stem.weight.dtype

    def weighted_layers(self) -> int:
        return 1 + 2 * len(self.blocks) + 1

    def fit_scaler(self, x: np.ndarray):
        flat = np.asarray(x, dtype=np.float64).reshape(-1, self.cfg.in_features)
        self.mean = flat.mean(0)
        sd = flat.std(0)
        self.std = np.where(sd > 1e-12, sd, 1.0)

    def __call__(self, x) -> list[Tensor]:
        if isinstance(x, Tensor):
            t = x
        else:
            arr = np.asarray(x, dtype=np.float64)
            if arr.ndim != 3 or arr.shape[1:] != (self.cfg.seq_len, self.cfg.in_features):
                raise ValueError(f"expected (B, {self.cfg.seq_len}, {self.cfg.in_features}), got {arr.shape}")
            arr = (arr - self.mean) / self.std
            t = Tensor(arr.astype(self.dtype))
        b = t.shape[0]
        y = self.stem(t.reshape(b, self.cfg.seq_len, 1, self.cfg.in_features)).relu()
        for blk in self.blocks:
            y = blk(y)
        pooled = y.mean(axis=(1, 2))
        return [h(pooled) for h in self.heads]

    def predict_proba(self, x, chunk: int = 256) -> list[np.ndarray]:
        outs = [[] for _ in self.heads]
        with no_grad():
            for s in range(0, len(x), chunk):
                for i, lg in enumerate(self(x[s:s + chunk])):
                    outs[i].append(softmax(lg.data.astype(np.float64)))
        return [np.concatenate(o) if o else np.zeros((0, n)) for o, n in zip(outs, self.cfg.heads)]

    def save(self, path, meta: dict | None = None):
        state = self.state_dict()
        state["scaler.mean"] = self.mean.astype(self.dtype)
        state["scaler.std"] = self.std.astype(self.dtype)
        m = {"kind": "resnet1d", "config": self.cfg.to_dict(), "dtype": str(self.dtype)}
        m.update(meta or {})
        checkpoint.save(path, state, m)

    @classmethod
    def load(cls, path) -> "Resnet1D":
        tensors, meta = checkpoint.load(path)
        if meta.get("kind") != "resnet1d":
            raise checkpoint.CheckpointError(f"{path}: not a ResNet-1D checkpoint")
        model = cls(Resnet1DConfig.from_dict(meta["config"]), dtype=np.dtype(meta["dtype"]))
        model.mean = tensors.pop("scaler.mean").astype(np.float64)
        model.std = tensors.pop("scaler.std").astype(np.float64)
        model.load_state_dict(tensors)
        return model


@dataclass
class FitHistory:
    losses: list[float] = field(default_factory=list)


def fit_resnet(model: Resnet1D, x, labels, weights=None, epochs: int = 100, lr: float = 1e-4, batch_size: int = 32,
               seed: int = 0, clip_norm: float = 5.0) -> FitHistory:
    """Adam on the weighted sum of per-head softmax cross-entropies.

    ``labels`` is a list with one int array per head; ``weights`` are the
    per-head loss multipliers (default 1 each).  Fits the input scaler first.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = [np.asarray(l, dtype=np.int64) for l in labels]
    if len(labels) != len(model.heads) or any(len(l) != len(x) for l in labels):
        raise ValueError("one label array per head, each matching the sample count")
    weights = [1.0] * len(labels) if weights is None else list(weights)
    model.fit_scaler(x)
    xs = ((x - model.mean) / model.std).astype(model.dtype)
    rng = np.random.default_rng(seed)
    params = model.named_parameters()
    opt = AdamState(lr=lr)
    hist = FitHistory()
    for _ in range(epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for s in range(0, len(x), batch_size):
            idx = order[s:s + batch_size]
            model.zero_grad()
            outs = model(Tensor(xs[idx]))
            loss = None
            for out, lab, w in zip(outs, labels, weights):
                if w == 0:
                    continue
                term = softmax_ce(out, lab[idx]) * w
                loss = term if loss is None else loss + term
            loss.backward()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            clip_grad_norm(grads, clip_norm)
            adam_step(params, grads, opt)
            total += float(loss.data)
        hist.losses.append(total / len(x))
    return hist
