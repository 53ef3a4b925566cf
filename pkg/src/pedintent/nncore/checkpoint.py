"""Versioned binary checkpoint container (layout in docs/formats.md).

All integers little-endian::

    magic    8 bytes  b"PIDCKPT\\0"
    version  u32      currently 1
    meta_len u32      length of the JSON metadata block
    meta     bytes    UTF-8 JSON object
    count    u32      number of tensors
    count x:
        name_len u16, name (UTF-8)
        dtype    u8   1 = float32, 2 = float64
        ndim     u8
        dims     ndim x u32
        data     prod(dims) little-endian values, C order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .optim import AdamState

MAGIC = b"PIDCKPT\0"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class CheckpointError(ValueError):
    pass


def save(path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    meta_b = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_b)), meta_b, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 16
    meta = json.loads(buf[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        dims = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        dt = _DTYPES[code]
        n = int(np.prod(dims)) if dims else 1
        tensors[name] = np.frombuffer(buf, dtype=dt, count=n, offset=pos).reshape(dims).astype(dt.newbyteorder("="))
        pos += n * dt.itemsize
    return tensors, meta


def pack_adam(state: AdamState) -> tuple[dict[str, np.ndarray], dict]:
    tensors = {f"adam.m/{k}": v for k, v in state.m.items()}
    tensors.update({f"adam.v/{k}": v for k, v in state.v.items()})
    meta = {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps, "t": state.t}
    return tensors, meta


def unpack_adam(tensors: dict[str, np.ndarray], meta: dict) -> AdamState:
    st = AdamState(lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"], t=meta["t"])
    for k, v in tensors.items():
        if k.startswith("adam.m/"):
            st.m[k[7:]] = v.copy()
        elif k.startswith("adam.v/"):
            st.v[k[7:]] = v.copy()
    return st
