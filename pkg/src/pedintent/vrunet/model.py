"""The multi-task network: pose, box and scene encoders feeding five
classification heads and an LSTM trajectory decoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..datapipe.schema import MASK_CLASSES, NUM_CLASSES, TASKS, resize_mask
from ..datapipe.windows import SequenceSample
from ..nncore import Conv2d, Linear, LSTMCell, Module, ShapeError, Tensor, concat, maxpool2d, out_size, stack
from ..nncore.ops import softmax
from .config import VRUNetConfig

N_MASK = len(MASK_CLASSES)


@dataclass
class Batch:
    """Model-ready arrays for a list of samples.

    Poses are body-centred: joint offsets from the box centre divided by box
    height, visibility kept.  Boxes and centres are divided by image size.
    """
    poses: np.ndarray        # (B, N, 17, 3)
    boxes: np.ndarray        # (B, N, 4, 1)
    scene: np.ndarray        # (B, H, W, 5) time-averaged one-hot
    last_center: np.ndarray  # (B, 2)
    labels: np.ndarray       # (B, 5) int
    future: np.ndarray       # (B, horizon, 2)

    def __len__(self) -> int:
        return self.poses.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


def mean_mask(masks: np.ndarray) -> np.ndarray:
    """One-hot encode ``(N, H, W)`` class indices and average over time."""
    masks = np.asarray(masks)
    if masks.size and (masks.min() < 0 or masks.max() >= N_MASK):
        raise ValueError(f"mask class index outside [0, {N_MASK - 1}]")
    onehot = np.eye(N_MASK)[masks.astype(np.int64)]
    return onehot.mean(axis=0)


def normalize_inputs(s: SequenceSample, cfg: VRUNetConfig):
    w, h = s.image_size
    boxes = np.asarray(s.boxes, dtype=np.float64)
    poses = np.asarray(s.poses, dtype=np.float64)
    if poses.shape != (cfg.obs_len, 17, 3) or boxes.shape != (cfg.obs_len, 4):
        raise ShapeError(f"sample {s.scene_id}/{s.person_id}: expected {cfg.obs_len} observed frames, "
                         f"got poses {poses.shape}, boxes {boxes.shape}")
    bh = np.maximum(boxes[:, 3:4], 1e-6)
    p = poses.copy()
    p[..., 0] = (poses[..., 0] - boxes[:, 0:1]) / bh
    p[..., 1] = (poses[..., 1] - boxes[:, 1:2]) / bh
    b = boxes / np.array([w, h, w, h])
    return p, b


def make_batch(samples: list[SequenceSample], cfg: VRUNetConfig, dtype=np.float32) -> Batch:
    poses, boxes, scenes, labels, future = [], [], [], [], []
    for s in samples:
        p, b = normalize_inputs(s, cfg)
        poses.append(p)
        boxes.append(b[..., None])
        m = np.asarray(s.scene)
        if m.shape[1:] != (cfg.mask_h, cfg.mask_w):
            m = resize_mask(m, cfg.mask_h, cfg.mask_w)
        scenes.append(mean_mask(m))
        labels.append([s.label(t) for t in TASKS])
        fut = np.asarray(s.future_centers, dtype=np.float64)
        if fut.shape != (cfg.horizon, 2):
            raise ShapeError(f"future_centers {fut.shape} != ({cfg.horizon}, 2)")
        future.append(fut / np.asarray(s.image_size, dtype=np.float64))
    as_arr = lambda xs, shape: np.asarray(xs, dtype=dtype).reshape(shape)
    n = len(samples)
    bx = as_arr(boxes, (n, cfg.obs_len, 4, 1))
    return Batch(
        poses=as_arr(poses, (n, cfg.obs_len, 17, 3)), boxes=bx,
        scene=as_arr(scenes, (n, cfg.mask_h, cfg.mask_w, N_MASK)),
        last_center=np.ascontiguousarray(bx[:, -1, :2, 0]),
        labels=np.asarray(labels, dtype=np.int64).reshape(n, len(TASKS)),
        future=as_arr(future, (n, cfg.horizon, 2)),
    )


class SequenceEncoder(Module):
    """Two stride-2 3x3 convs over the (time x width) grid, an LSTM over
    the reduced time axis, then two FC layers."""

    def __init__(self, width: int, channels_in: int, cfg: VRUNetConfig, rng, dtype):
        c = cfg.conv_channels
        self.conv1 = Conv2d(channels_in, c, 3, 2, rng, dtype)
        self.conv2 = Conv2d(c, c, 3, 2, rng, dtype)
        self.out_width = out_size(out_size(width, 2), 2)
        self.lstm = LSTMCell(self.out_width * c, cfg.hidden, rng, dtype)
        self.fc1 = Linear(cfg.hidden, cfg.embed, rng, dtype)
        self.fc2 = Linear(cfg.embed, cfg.embed, rng, dtype)

    def __call__(self, x: Tensor):
        y = self.conv2(self.conv1(x).relu()).relu()
        b, t, w, c = y.shape
        h, cell = self.lstm.zero_state(b, y.dtype)
        for k in range(t):
            h, cell = self.lstm(y[:, k].reshape(b, w * c), h, cell)
        emb = self.fc2(self.fc1(h).relu()).relu()
        return emb, (h, cell)


class SceneEncoder(Module):
    def __init__(self, cfg: VRUNetConfig, rng, dtype):
        c1, c2 = cfg.scene_channels
        self.convs = [Conv2d(N_MASK, c1, 3, 2, rng, dtype), Conv2d(c1, c1, 3, 2, rng, dtype),
                      Conv2d(c1, c2, 3, 2, rng, dtype), Conv2d(c2, c2, 3, 2, rng, dtype)]
        self.flat_dim = scene_flatten_size(cfg)
        widths = (self.flat_dim,) + tuple(cfg.scene_fc)
        self.fcs = [Linear(a, b, rng, dtype) for a, b in zip(widths[:-1], widths[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, conv in enumerate(self.convs):
            x = conv(x).relu()
            if i in (1, 3):
                x = maxpool2d(x, 2, 1)
        x = x.reshape(x.shape[0], -1)
        for fc in self.fcs:
            x = fc(x).relu()
        return x


def scene_flatten_size(cfg: VRUNetConfig) -> int:
    h, w = cfg.mask_h, cfg.mask_w
    for _ in range(4):
        h, w = out_size(h, 2), out_size(w, 2)
    return h * w * cfg.scene_channels[1]


class Head(Module):
    def __init__(self, n_in: int, hidden: int, k: int, rng, dtype):
        self.fc1 = Linear(n_in, hidden, rng, dtype)
        self.fc2 = Linear(hidden, k, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).relu())


class TrajectoryDecoder(Module):
    """Autoregressive LSTM; each step predicts an offset from the previous centre."""

    def __init__(self, cfg: VRUNetConfig, rng, dtype):
        self.lstm = LSTMCell(2, cfg.hidden, rng, dtype)
        self.out = Linear(cfg.hidden, 2, rng, dtype, scale=1e-3)

    def __call__(self, start: np.ndarray, state, steps: int, teacher: np.ndarray | None = None) -> Tensor:
        h, c = state
        prev = Tensor(start)
        preds = []
        for k in range(steps):
            h, c = self.lstm(prev, h, c)
            p = prev + self.out(h)
            preds.append(p)
            prev = Tensor(teacher[:, k]) if teacher is not None else p
        return stack(preds, axis=1)


@dataclass
class RawOutput:
    logits: dict[str, Tensor]
    trajectory: Tensor   # (B, horizon, 2) normalized


@dataclass
class PredictionBundle:
    """Per-sample class distributions and normalized future centres."""
    gait: np.ndarray
    attention: np.ndarray
    orientation: np.ndarray
    distraction: np.ndarray
    crossing: np.ndarray
    trajectory: np.ndarray

    def probs(self, task: str) -> np.ndarray:
        return getattr(self, task)

    def __len__(self) -> int:
        return self.trajectory.shape[0]


class VRUNet(Module):
    def __init__(self, cfg: VRUNetConfig, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.pose_enc = SequenceEncoder(17, 3, cfg, rng, dtype)
        self.box_enc = SequenceEncoder(4, 1, cfg, rng, dtype)
        self.scene_enc = SceneEncoder(cfg, rng, dtype) if cfg.use_scene else None
        self.heads = [Head(3 * cfg.embed, cfg.head_hidden, NUM_CLASSES[t], rng, dtype) for t in TASKS]
        self.decoder = TrajectoryDecoder(cfg, rng, dtype)

    @property
    def dtype(self):
        return self.decoder.out.weight.dtype

    def trajectory_parameters(self) -> list[Tensor]:
        """Decoder LSTM and output layer parameters, the target of the L2 penalty."""
        return list(self.decoder.parameters())

    def encode_pose(self, poses: np.ndarray) -> Tensor:
        return self.pose_enc(Tensor(np.asarray(poses, self.dtype)))[0]

    def encode_box(self, boxes: np.ndarray):
        return self.box_enc(Tensor(np.asarray(boxes, self.dtype)))

    def encode_scene(self, scene: np.ndarray) -> Tensor:
        scene = np.asarray(scene, self.dtype)
        if self.scene_enc is None:
            return Tensor(np.zeros((scene.shape[0], self.cfg.embed), dtype=self.dtype))
        return self.scene_enc(Tensor(scene))

    def forward(self, batch: Batch, teacher_forcing: bool = False) -> RawOutput:
        pose_emb = self.encode_pose(batch.poses)
        box_emb, state = self.encode_box(batch.boxes)
        scene_emb = self.encode_scene(batch.scene)
        fused = concat([pose_emb, box_emb, scene_emb], axis=1)
        logits = {t: head(fused) for t, head in zip(TASKS, self.heads)}
        teacher = batch.future if teacher_forcing else None
        traj = self.decoder(np.asarray(batch.last_center, self.dtype), state, self.cfg.horizon, teacher)
        return RawOutput(logits, traj)

    __call__ = forward


def bundle_from(out: RawOutput) -> PredictionBundle:
    probs = {t: softmax(out.logits[t].data.astype(np.float64)) for t in TASKS}
    return PredictionBundle(**probs, trajectory=out.trajectory.data.astype(np.float64))


def concat_bundles(parts: list[PredictionBundle]) -> PredictionBundle:
    keys = list(TASKS) + ["trajectory"]
    return PredictionBundle(**{k: np.concatenate([getattr(p, k) for p in parts]) for k in keys})
