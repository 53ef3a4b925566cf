"""Fixed-length training windows: filtering, padding, sliding windows and splits."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .schema import TASKS, DataError, PedTrack, Scene, SceneContext, resize_mask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowConfig:
    obs_len: int = 30
    horizon: int = 30
    stride: int = 15
    fps: float = 30.0
    min_duration: float = 1.5
    pad_min_fraction: float = 0.75
    mask_h: int = 90
    mask_w: int = 160

    def __post_init__(self):
        if self.obs_len < 1 or self.horizon < 1 or self.stride < 1:
            raise ValueError("obs_len, horizon and stride must be >= 1")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    @property
    def total(self) -> int:
        return self.obs_len + self.horizon


@dataclass
class SequenceSample:
    scene_id: str
    person_id: str
    start_frame: int
    image_size: tuple[int, int]
    poses: np.ndarray           # (N, 17, 3) px
    boxes: np.ndarray           # (N, 4) px
    scene: np.ndarray           # (N, H, W) uint8 class indices
    gait: int
    attention: int
    orientation: int
    distraction: int
    crossing: int               # label at the last future frame
    future_centers: np.ndarray  # (horizon, 2) px
    context: SceneContext = field(default_factory=SceneContext)
    pad: np.ndarray | None = None  # (N + horizon,) bool

    def label(self, task: str) -> int:
        return getattr(self, task)

    @property
    def obs_len(self) -> int:
        return self.boxes.shape[0]

    @property
    def horizon(self) -> int:
        return self.future_centers.shape[0]


def filter_tracks(tracks: list[PedTrack], min_duration: float = 1.5, fps: float = 30.0) -> list[PedTrack]:
    """Keep tracks strictly longer than ``min_duration`` seconds."""
    if fps <= 0:
        raise ValueError("fps must be positive")
    limit = min_duration * fps
    return [t for t in tracks if len(t) > limit]


def _take(track: PedTrack, idx: np.ndarray, padded: np.ndarray) -> PedTrack:
    return PedTrack(track.person_id, track.frames[idx], track.boxes[idx], track.poses[idx],
                    {k: v[idx] for k, v in track.labels.items()}, track.occlusion[idx], padded)


def pad_track(track: PedTrack, cfg: WindowConfig) -> PedTrack:
    """Replicate edge frames until the track spans one full window.

    The missing count is split evenly; an odd remainder goes to the end.
    """
    n = len(track)
    need = cfg.total - n
    if need <= 0:
        return track
    if n < cfg.pad_min_fraction * cfg.total:
        raise DataError(f"track {track.person_id} too short to pad ({n} < {cfg.pad_min_fraction} x {cfg.total})")
    front = need // 2
    back = need - front
    idx = np.concatenate([np.zeros(front, int), np.arange(n), np.full(back, n - 1)])
    flags = np.concatenate([np.ones(front, bool), track.pad_flags, np.ones(back, bool)])
    return _take(track, idx, flags)


def window_starts(length: int, cfg: WindowConfig) -> list[int]:
    if length < cfg.total:
        return []
    return list(range(0, length - cfg.total + 1, cfg.stride))


def make_windows(track: PedTrack, cfg: WindowConfig, scene: Scene | None = None) -> list[SequenceSample]:
    """Slide a window of ``obs_len + horizon`` frames along the track.

    Action labels come from the last observed frame; the crossing label from
    the last future frame.  Tracks that stay too short after padding give no
    windows.
    """
    if len(track) < cfg.total:
        try:
            track = pad_track(track, cfg)
        except DataError:
            return []
    sid = scene.scene_id if scene is not None else ""
    image = scene.image_size if scene is not None else (640, 360)
    ctx = scene.context if scene is not None else SceneContext()
    n, h = cfg.obs_len, cfg.horizon
    flags = track.pad_flags
    out = []
    for s in window_starts(len(track), cfg):
        obs = slice(s, s + n)
        fut = slice(s + n, s + n + h)
        cur = s + n - 1
        if scene is not None and scene.masks is not None:
            masks = np.stack([scene.mask_at(int(f)) for f in track.frames[obs]])
            masks = resize_mask(masks, cfg.mask_h, cfg.mask_w)
        else:
            masks = np.zeros((n, cfg.mask_h, cfg.mask_w), dtype=np.uint8)
        labels = {t: int(track.labels[t][cur]) for t in TASKS if t != "crossing"}
        out.append(SequenceSample(
            scene_id=sid, person_id=track.person_id, start_frame=int(track.frames[s]), image_size=tuple(image),
            poses=track.poses[obs].copy(), boxes=track.boxes[obs].copy(), scene=np.ascontiguousarray(masks, np.uint8),
            crossing=int(track.labels["crossing"][s + n + h - 1]), future_centers=track.boxes[fut, :2].copy(),
            context=ctx, pad=flags[s:s + n + h].copy(), **labels,
        ))
    return out


@dataclass
class BuildStats:
    tracks_in: int = 0
    tracks_kept: int = 0
    tracks_skipped: int = 0
    windows: int = 0


def build_samples(scenes: list[Scene], cfg: WindowConfig) -> tuple[list[SequenceSample], BuildStats]:
    """Windows for every track of every scene, in scene/person order."""
    stats = BuildStats()
    samples: list[SequenceSample] = []
    for sc in sorted(scenes, key=lambda s: s.scene_id):
        stats.tracks_in += len(sc.tracks)
        kept = filter_tracks(sc.tracks, cfg.min_duration, cfg.fps)
        stats.tracks_kept += len(kept)
        for t in kept:
            w = make_windows(t, cfg, sc)
            if not w:
                stats.tracks_skipped += 1
            samples.extend(w)
    stats.windows = len(samples)
    return samples, stats


def split(samples: list[SequenceSample], ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Partition by scene id so no video contributes to two splits."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    ids = sorted({s.scene_id for s in samples})
    order = np.random.default_rng(seed).permutation(len(ids))
    ids = [ids[i] for i in order]
    n_train = int(round(ratios[0] * len(ids)))
    n_val = min(int(round(ratios[1] * len(ids))), len(ids) - n_train)
    groups = [set(ids[:n_train]), set(ids[n_train:n_train + n_val]), set(ids[n_train + n_val:])]
    return tuple([s for s in samples if s.scene_id in g] for g in groups)


def with_arrays(sample: SequenceSample, **changes) -> SequenceSample:
    return replace(sample, **changes)
