"""Binary sample corpus (layout in docs/formats.md).

All integers little-endian::

    magic    8 bytes  b"PIDCORP\\0"
    version  u32      1
    count    u32      number of samples
    count x sample:
        meta_len u32, meta  UTF-8 JSON {scene_id, person_id, start_frame, image_size}
        nfields  u32
        nfields x field:
            name_len u16, name (UTF-8)
            dtype    u8    1 = float32, 3 = uint8
            ndim     u8
            dims     ndim x u32
            data     C-order values

Fields per sample: poses (N,17,3), boxes (N,4), scene (N,H,W) uint8,
future_centers (horizon,2), labels (5,) in task order gait, attention,
orientation, distraction, crossing, context (5,), pad (N+horizon,).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .schema import TASKS, DataError, SceneContext
from .windows import SequenceSample

MAGIC = b"PIDCORP\0"
VERSION = 1
_DT = {1: np.dtype("<f4"), 3: np.dtype("u1")}


def _field(name: str, arr: np.ndarray, code: int) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=_DT[code])
    nb = name.encode("utf-8")
    return (struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, arr.ndim)
            + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes())


def encode_sample(s: SequenceSample) -> bytes:
    meta = json.dumps({"scene_id": s.scene_id, "person_id": s.person_id, "start_frame": s.start_frame,
                       "image_size": list(s.image_size)}, sort_keys=True).encode("utf-8")
    labels = np.array([s.label(t) for t in TASKS])
    pad = s.pad if s.pad is not None else np.zeros(s.obs_len + s.horizon)
    fields = [
        _field("poses", s.poses, 1), _field("boxes", s.boxes, 1), _field("scene", s.scene, 3),
        _field("future_centers", s.future_centers, 1), _field("labels", labels, 1),
        _field("context", s.context.as_array(), 1), _field("pad", pad, 1),
    ]
    return struct.pack("<I", len(meta)) + meta + struct.pack("<I", len(fields)) + b"".join(fields)


def write_corpus(path, samples) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(samples)))
        for s in samples:
            fh.write(encode_sample(s))


def read_corpus(path) -> list[SequenceSample]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise DataError(f"{path}: not a sample corpus")
    version, count = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise DataError(f"{path}: unsupported corpus version {version}")
    pos = 16
    out = []
    for _ in range(count):
        (mlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        meta = json.loads(buf[pos:pos + mlen])
        pos += mlen
        (nf,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        f = {}
        for _ in range(nf):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            dims = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            dt = _DT[code]
            n = int(np.prod(dims)) if ndim else 1
            f[name] = np.frombuffer(buf, dtype=dt, count=n, offset=pos).reshape(dims)
            pos += n * dt.itemsize
        lab = f["labels"].astype(int)
        ctx = f["context"].astype(int)
        out.append(SequenceSample(
            scene_id=meta["scene_id"], person_id=meta["person_id"], start_frame=meta["start_frame"],
            image_size=tuple(meta["image_size"]),
            poses=f["poses"].astype(np.float64), boxes=f["boxes"].astype(np.float64), scene=f["scene"].copy(),
            future_centers=f["future_centers"].astype(np.float64),
            context=SceneContext(*[int(v) for v in ctx]), pad=f["pad"].astype(bool),
            **{t: int(v) for t, v in zip(TASKS, lab)},
        ))
    return out
