"""Procedural street scenes with labelled pedestrians.

Each scene holds one pedestrian walking (or standing) horizontally next to
a vertical road band.  The rules that tie labels to observable evidence:

* walking: legs swing sinusoidally and the box moves at 2-3 px/frame;
  standing pedestrians are static.
* looking: eye keypoints are visible (v >= 0.8), otherwise v <= 0.2.
* orientation: shoulder spread and nose offset/visibility encode
  left / right / front / back.
* phoning: one wrist is raised to the ear with a sharply bent elbow.
* crossing: the centre of the last future box lies on road cells.  A
  scene is generated so that crossing happens exactly when the pedestrian
  walks and the road carries a crosswalk (painted as sidewalk-class zebra
  stripes); walkers without a crosswalk stop short of the road.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import J
from .schema import CAR, PEDESTRIAN, ROAD, SIDEWALK, SIGN, TASKS, PedTrack, Scene, SceneContext

# front-facing template in units of box height; +x is image right, which is
# the person's left side when they face the camera
_TEMPLATE = {
    "nose": (0.0, -0.42), "left_eye": (0.03, -0.44), "right_eye": (-0.03, -0.44),
    "left_ear": (0.06, -0.43), "right_ear": (-0.06, -0.43),
    "left_shoulder": (0.11, -0.30), "right_shoulder": (-0.11, -0.30),
    "left_elbow": (0.13, -0.13), "right_elbow": (-0.13, -0.13),
    "left_wrist": (0.14, 0.03), "right_wrist": (-0.14, 0.03),
    "left_hip": (0.07, 0.02), "right_hip": (-0.07, 0.02),
    "left_knee": (0.07, 0.25), "right_knee": (-0.07, 0.25),
    "left_ankle": (0.07, 0.48), "right_ankle": (-0.07, 0.48),
}
# (x spread of paired joints, nose x offset, nose visibility)
_ORIENT = {0: (0.3, -0.06, 0.9), 1: (0.3, 0.06, 0.9), 2: (1.0, 0.0, 0.95), 3: (-1.0, 0.0, 0.1)}


@dataclass(frozen=True)
class SynthSpec:
    n_scenes: int = 100
    track_len: int = 60
    obs_len: int = 30
    fps: float = 30.0
    image_size: tuple[int, int] = (640, 360)
    mask_size: tuple[int, int] = (36, 64)   # (H, W) cells
    p_walking: float = 0.6
    p_looking: float = 0.5
    p_phoning: float = 0.3
    p_crossing: float = 0.35
    p_orientation: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    p_curved: float = 0.3
    keypoint_noise: float = 0.0
    id_prefix: str = "synth"

    def validate(self):
        if self.n_scenes < 0:
            raise ValueError("n_scenes must be >= 0")
        if self.track_len < 2 or not 1 <= self.obs_len < self.track_len:
            raise ValueError("need track_len >= 2 and 1 <= obs_len < track_len")
        if self.fps <= 0 or min(self.image_size) <= 0 or min(self.mask_size) <= 0:
            raise ValueError("fps, image_size and mask_size must be positive")
        for name in ("p_walking", "p_looking", "p_phoning", "p_crossing", "p_curved"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.p_crossing > self.p_walking:
            raise ValueError("p_crossing cannot exceed p_walking (only walkers cross)")
        if len(self.p_orientation) != 4 or abs(sum(self.p_orientation) - 1.0) > 1e-9:
            raise ValueError("p_orientation must be 4 probabilities summing to 1")
        if self.image_size[0] < 500 or self.image_size[1] < 300:
            raise ValueError("image must be at least 500x300 px to lay out a scene")
        if (self.track_len - self.obs_len) * 3.0 > 100:
            raise ValueError("horizon too long for the scene layout (max 33 frames)")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown synth spec keys: {sorted(bad)}")
        d = dict(d)
        for k in ("image_size", "mask_size", "p_orientation"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class SynthScene(Scene):
    layout: np.ndarray | None = None   # (H, W) static background classes
    road_band: tuple[float, float] = (0.0, 0.0)
    info: dict = field(default_factory=dict)


def scene_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def synthesize_scenes(spec: SynthSpec, seed: int = 0) -> list[SynthScene]:
    spec.validate()
    return [synthesize_scene(spec, seed, i) for i in range(spec.n_scenes)]


def _draw_labels(spec: SynthSpec, rng) -> dict[str, int]:
    crossing = int(rng.random() < spec.p_crossing)
    if crossing:
        walking = 1
    else:
        q = (spec.p_walking - spec.p_crossing) / (1.0 - spec.p_crossing) if spec.p_crossing < 1 else 0.0
        walking = int(rng.random() < q)
    return {
        "gait": walking,
        "attention": int(rng.random() < spec.p_looking),
        "orientation": int(rng.choice(4, p=spec.p_orientation)),
        "distraction": int(rng.random() < spec.p_phoning),
        "crossing": crossing,
    }


def synthesize_scene(spec: SynthSpec, seed: int, index: int) -> SynthScene:
    rng = scene_rng(seed, index)
    W, H = spec.image_size
    mh, mw = spec.mask_size
    cell_w = W / mw
    n_obs, L = spec.obs_len, spec.track_len
    hor = L - n_obs
    lab = _draw_labels(spec, rng)
    walking = lab["gait"] == 1
    cross = lab["crossing"] == 1

    lane_wide = int(rng.random() < 0.5)
    rw = rng.uniform(200, 260) if lane_wide else rng.uniform(120, 160)
    crosswalk = 1 if cross else (0 if walking else int(rng.random() < 0.5))
    h = rng.uniform(90, 130)
    bw = 0.4 * h
    margin = max(10.0, 1.5 * cell_w)
    # short horizons walk faster so a crossing can still reach the road
    v = rng.uniform(2.0, 3.0) * max(1.0, (2 * margin + 2) / (2.0 * hor)) if walking else 0.0
    edge = bw / 2 + 5

    # lay out in a frame where the pedestrian heads towards +x
    if cross:
        xc = rng.uniform(edge + v * (n_obs - 1), W - rw - margin)
        x_end = xc + v * hor
        a = rng.uniform(xc + margin, min(x_end - margin, W - rw))
    elif walking:
        x_end_span = v * hor
        lo = edge + v * (n_obs - 1)
        hi = W - rw - 2 * margin - x_end_span
        xc = rng.uniform(lo, hi)
        a = rng.uniform(xc + x_end_span + 2 * margin, W - rw)
    else:
        if rng.random() < 0.5:
            xc = rng.uniform(edge, W - rw - edge - margin)
            a = rng.uniform(xc + edge + margin, W - rw)
        else:
            xc = rng.uniform(rw + edge + margin, W - edge)
            a = rng.uniform(0.0, xc - edge - margin - rw)
    direction = 1 if rng.random() < 0.5 else -1
    t = np.arange(L) - (n_obs - 1)
    cx = xc + v * t
    if direction < 0:
        cx = W - cx
        a = W - (a + rw)
    y0 = rng.uniform(180, 260)
    kappa = rng.uniform(-0.01, 0.01) if (walking and rng.random() < spec.p_curved) else 0.0
    cy = y0 + kappa * t.astype(float) ** 2
    boxes = np.stack([cx, cy, np.full(L, bw), np.full(L, h)], axis=1)

    ctx = SceneContext(traffic_light=int(rng.random() < 0.5), traffic_sign=int(rng.random() < 0.5),
                       crosswalk=crosswalk, lane_narrow=1 - lane_wide, lane_wide=lane_wide)
    layout = _layout(spec, rng, (a, a + rw), ctx, y0, h)
    poses = _poses(rng, boxes, lab, walking, spec.fps)
    if spec.keypoint_noise > 0:
        poses[..., :2] += rng.normal(0, spec.keypoint_noise, poses[..., :2].shape)

    cell_r = np.clip((cy * mh / H).astype(int), 0, mh - 1)
    cell_c = np.clip((cx * mw / W).astype(int), 0, mw - 1)
    on_road = (layout[cell_r, cell_c] == ROAD).astype(int)
    labels = {k: np.full(L, lab[k]) for k in TASKS if k != "crossing"}
    labels["crossing"] = on_road
    masks = np.repeat(layout[None], L, axis=0)
    for f in range(L):
        _paint_box(masks[f], boxes[f], PEDESTRIAN, W, H)

    track = PedTrack("ped0", np.arange(L), boxes, poses, labels, np.zeros(L))
    sid = f"{spec.id_prefix}_{index:05d}"
    return SynthScene(sid, ctx, [track], (W, H), masks, 0, [], layout=layout, road_band=(a, a + rw),
                      info={"direction": direction, "speed": v, "curved": kappa != 0.0})


def _cells(lo: float, hi: float, size: float, n: int) -> slice:
    # cells whose centres fall inside [lo, hi)
    first = max(0, math.ceil(lo / size - 0.5))
    last = min(n, math.ceil(hi / size - 0.5))
    return slice(first, max(first, last))


def _layout(spec: SynthSpec, rng, band, ctx: SceneContext, y0: float, h: float) -> np.ndarray:
    W, H = spec.image_size
    mh, mw = spec.mask_size
    cw, ch = W / mw, H / mh
    grid = np.full((mh, mw), SIDEWALK, dtype=np.uint8)
    cols = _cells(band[0], band[1], cw, mw)
    grid[:, cols] = ROAD
    ped_row = int(y0 / ch)
    if ctx.crosswalk:
        # zebra stripes above and below the walking line
        period = max(2, int(round(20 / ch)))
        for r in range(mh):
            if abs(r - ped_row) > 1 and (r // max(1, period // 2)) % 2 == 0:
                grid[r, cols] = SIDEWALK
    if rng.random() < 0.5:
        car_h = max(2, int(round(60 / ch)))
        top = ped_row + int(round(0.8 * h / ch)) + 1 if rng.random() < 0.5 else 0
        top = min(top, mh - car_h)
        c0 = cols.start + max(0, (cols.stop - cols.start) // 4)
        c1 = max(c0 + 1, cols.stop - max(0, (cols.stop - cols.start) // 4))
        if abs(top + car_h // 2 - ped_row) > 2:
            grid[top:top + car_h, c0:c1] = CAR
    if ctx.traffic_sign:
        s = max(1, int(round(20 / cw)))
        c = cols.start - s - 1 if cols.start - s - 1 >= 0 else min(cols.stop + 1, mw - s)
        grid[1:1 + 2 * s, c:c + s] = SIGN
    return grid


def _paint_box(grid: np.ndarray, box, cls: int, W: int, H: int):
    mh, mw = grid.shape
    cx, cy, w, h = box
    rows = _cells(cy - h / 2, cy + h / 2, H / mh, mh)
    cols = _cells(cx - w / 2, cx + w / 2, W / mw, mw)
    if rows.stop == rows.start or cols.stop == cols.start:
        r = min(max(int(cy * mh / H), 0), mh - 1)
        c = min(max(int(cx * mw / W), 0), mw - 1)
        grid[r, c] = cls
    else:
        grid[rows, cols] = cls


def _poses(rng, boxes: np.ndarray, lab: dict, walking: bool, fps: float) -> np.ndarray:
    L = len(boxes)
    spread, nose_dx, nose_v = _ORIENT[lab["orientation"]]
    eye_v = rng.uniform(0.8, 1.0) if lab["attention"] else rng.uniform(0.0, 0.2)
    freq = rng.uniform(0.8, 1.2)     # strides per second
    phase0 = rng.uniform(0, 2 * math.pi)
    amp = rng.uniform(0.10, 0.14)
    phone_side = "left" if rng.random() < 0.5 else "right"
    out = np.zeros((L, 17, 3))
    for f in range(L):
        pts = {k: np.array(v, dtype=float) for k, v in _TEMPLATE.items()}
        for k in pts:
            if k.startswith(("left", "right")):
                pts[k][0] *= spread
        pts["nose"][0] = nose_dx
        if walking:
            ph = phase0 + 2 * math.pi * freq * f / fps
            s = math.sin(ph)
            pts["left_ankle"][0] += amp * s
            pts["right_ankle"][0] -= amp * s
            pts["left_knee"][0] += 0.5 * amp * s
            pts["right_knee"][0] -= 0.5 * amp * s
            pts["left_ankle"][1] -= 0.03 * max(0.0, s)
            pts["right_ankle"][1] -= 0.03 * max(0.0, -s)
            pts["left_wrist"][0] -= 0.3 * amp * s
            pts["right_wrist"][0] += 0.3 * amp * s
        if lab["distraction"]:
            sh, el, wr, ear = (pts[f"{phone_side}_{j}"] for j in ("shoulder", "elbow", "wrist", "ear"))
            el[:] = sh + np.array([0.04 * np.sign(sh[0] or 1.0), 0.14])
            wr[:] = ear + np.array([0.0, 0.03])
        cx, cy, _, h = boxes[f]
        for k, (x, y) in pts.items():
            out[f, J[k], 0] = cx + x * h
            out[f, J[k], 1] = cy + y * h
        out[f, :, 2] = 0.95
        out[f, [J["left_eye"], J["right_eye"]], 2] = eye_v
        out[f, J["nose"], 2] = nose_v
        if lab["orientation"] in (0, 1):
            hidden = "right_ear" if lab["orientation"] == 0 else "left_ear"
            out[f, J[hidden], 2] = 0.1
    return out
