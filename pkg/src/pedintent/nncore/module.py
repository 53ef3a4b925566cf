"""Parameter containers and the small set of layers the models are built from."""
from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Walks attributes to find parameters; names are dotted attribute paths."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        found: dict[str, Tensor] = {}
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                found[name] = val
            elif isinstance(val, Module):
                found.update(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        found.update(item.named_parameters(f"{name}.{i}."))
        return found

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


def param(data: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel=3, stride=1, rng=None, dtype=np.float32):
        kh, kw = ops._pair(kernel)
        bound = ops.he_bound(kh * kw * cin)
        self.weight = param(rng.uniform(-bound, bound, (kh, kw, cin, cout)), dtype)
        self.bias = param(np.zeros(cout), dtype)
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng=None, dtype=np.float32, scale: float | None = None):
        bound = ops.he_bound(n_in) if scale is None else scale
        self.weight = param(rng.uniform(-bound, bound, (n_in, n_out)), dtype)
        self.bias = param(np.zeros(n_out), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.fc(x, self.weight, self.bias)


class LSTMCell(Module):
    def __init__(self, n_in: int, hidden: int, rng=None, dtype=np.float32):
        bound = 1.0 / math.sqrt(hidden)
        self.hidden = hidden
        self.weight = param(rng.uniform(-bound, bound, (n_in + hidden, 4 * hidden)), dtype)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget gate
        self.bias = param(b, dtype)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        return ops.lstm_cell(x, h, c, self.weight, self.bias)

    def zero_state(self, batch: int, dtype) -> tuple[Tensor, Tensor]:
        z = np.zeros((batch, self.hidden), dtype=dtype)
        return Tensor(z), Tensor(z.copy())
