"""Label vocabularies, scene/track containers and the annotation file format.

Annotations are newline-delimited JSON, one object per person-frame::

    {"scene_id": "video_0001", "frame": 12, "person_id": "p0",
     "box": [cx, cy, w, h], "pose": [[x, y, v] x 17],
     "gait": "walking", "attention": "looking", "orientation": "front",
     "distraction": "not_phoning", "crossing": "not_crossing",
     "occlusion_fraction": 0.1,
     "scene": {"traffic_light": 0, "traffic_sign": 1, "crosswalk": 1, "lane": "narrow"}}

Label fields may be ``null`` for unannotated frames.  Scene masks live next
to the annotation file in ``masks/<scene_id>.bin`` (uint8 class indices,
frame-major, C order) with a ``masks/<scene_id>.json`` header giving
``height``, ``width``, ``first_frame``, ``num_frames``, ``image_width``
and ``image_height``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

TASKS = ("gait", "attention", "orientation", "distraction", "crossing")
LABELS = {
    "gait": ("standing", "walking"),
    "attention": ("not_looking", "looking"),
    "orientation": ("left", "right", "front", "back"),
    "distraction": ("not_phoning", "phoning"),
    "crossing": ("not_crossing", "crossing"),
}
NUM_CLASSES = {t: len(v) for t, v in LABELS.items()}
ORIENT_FLIP = np.array([1, 0, 2, 3])  # left <-> right

MASK_CLASSES = ("road", "car", "pedestrian", "sidewalk", "traffic_sign")
ROAD, CAR, PEDESTRIAN, SIDEWALK, SIGN = range(5)

DEFAULT_IMAGE = (640, 360)
REQUIRED = ("scene_id", "frame", "person_id", "box", "pose")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def encode_label(task: str, value) -> int:
    if value is None:
        return -1
    try:
        return LABELS[task].index(value)
    except ValueError:
        raise DataError(f"{task}: unknown label {value!r} (expected one of {LABELS[task]})") from None


@dataclass(frozen=True)
class SceneContext:
    traffic_light: int = 0
    traffic_sign: int = 0
    crosswalk: int = 0
    lane_narrow: int = 0
    lane_wide: int = 0

    def __post_init__(self):
        if self.lane_narrow and self.lane_wide:
            raise DataError("lane cannot be both narrow and wide")

    @classmethod
    def from_record(cls, rec: dict | None) -> "SceneContext":
        rec = rec or {}
        lane = rec.get("lane")
        if lane not in (None, "narrow", "wide"):
            raise DataError(f"scene.lane: unknown value {lane!r}")
        return cls(int(bool(rec.get("traffic_light", 0))), int(bool(rec.get("traffic_sign", 0))),
                   int(bool(rec.get("crosswalk", 0))), int(lane == "narrow"), int(lane == "wide"))

    def to_record(self) -> dict:
        lane = "narrow" if self.lane_narrow else "wide" if self.lane_wide else None
        return {"traffic_light": self.traffic_light, "traffic_sign": self.traffic_sign,
                "crosswalk": self.crosswalk, "lane": lane}

    def as_array(self) -> np.ndarray:
        return np.array([self.traffic_light, self.traffic_sign, self.crosswalk, self.lane_narrow, self.lane_wide],
                        dtype=np.float64)


@dataclass
class PedTrack:
    """One pedestrian's time-ordered annotations inside a scene."""
    person_id: str
    frames: np.ndarray          # (L,) int
    boxes: np.ndarray           # (L, 4) cx, cy, w, h in px
    poses: np.ndarray           # (L, 17, 3) px
    labels: dict[str, np.ndarray]  # task -> (L,) int, -1 = unannotated
    occlusion: np.ndarray       # (L,)
    padded: np.ndarray | None = None  # (L,) bool, set by padding

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def pad_flags(self) -> np.ndarray:
        return self.padded if self.padded is not None else np.zeros(len(self), dtype=bool)


@dataclass
class Scene:
    scene_id: str
    context: SceneContext
    tracks: list[PedTrack]
    image_size: tuple[int, int] = DEFAULT_IMAGE
    masks: np.ndarray | None = None   # (F, H, W) uint8
    first_frame: int = 0
    excluded: list[str] = field(default_factory=list)

    def mask_at(self, frame: int, shape: tuple[int, int] | None = None) -> np.ndarray:
        if self.masks is None:
            return np.zeros(shape or (1, 1), dtype=np.uint8)
        i = int(np.clip(frame - self.first_frame, 0, len(self.masks) - 1))
        return self.masks[i]


# annotation records ---------------------------------------------------------

def parse_record(rec: dict, where: str, require_labels: bool = True) -> dict:
    if not isinstance(rec, dict):
        raise DataError(f"{where}: record is not a JSON object")
    for key in REQUIRED:
        if key not in rec:
            raise DataError(f"{where}: missing field '{key}'")
    try:
        box = np.asarray(rec["box"], dtype=np.float64)
        pose = np.asarray(rec["pose"], dtype=np.float64)
        frame = int(rec["frame"])
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}: non-numeric box/pose/frame ({exc})") from None
    if box.shape != (4,) or not np.all(np.isfinite(box)) or box[2] <= 0 or box[3] <= 0:
        raise DataError(f"{where}: field 'box' must be [cx, cy, w, h] with w, h > 0")
    if pose.shape != (17, 3) or not np.all(np.isfinite(pose)):
        raise DataError(f"{where}: field 'pose' must be 17 rows of [x, y, v]")
    out = {"scene_id": str(rec["scene_id"]), "person_id": str(rec["person_id"]), "frame": frame,
           "box": box, "pose": pose}
    for task in TASKS:
        val = rec.get(task)
        if val is None and require_labels and task not in rec:
            raise DataError(f"{where}: missing field '{task}'")
        try:
            out[task] = encode_label(task, val)
        except DataError as exc:
            raise DataError(f"{where}: field '{task}': {exc}") from None
    occ = rec.get("occlusion_fraction", 0.0)
    if occ is None or not 0.0 <= float(occ) <= 1.0:
        raise DataError(f"{where}: field 'occlusion_fraction' must lie in [0, 1]")
    out["occlusion_fraction"] = float(occ)
    try:
        out["scene"] = SceneContext.from_record(rec.get("scene"))
    except DataError as exc:
        raise DataError(f"{where}: field 'scene': {exc}") from None
    return out


def read_records(path, require_labels: bool = True) -> list[dict]:
    path = Path(path)
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path.name}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: invalid JSON ({exc.msg})") from None
            records.append(parse_record(rec, where, require_labels))
    return records


def annotation_files(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        return sorted(path.glob("*.ndjson"))
    if not path.exists():
        raise FileNotFoundError(path)
    return [path]


def group_records(records: list[dict]) -> list[Scene]:
    by_scene: dict[str, dict[str, list[dict]]] = {}
    contexts: dict[str, SceneContext] = {}
    for r in records:
        by_scene.setdefault(r["scene_id"], {}).setdefault(r["person_id"], []).append(r)
        contexts.setdefault(r["scene_id"], r["scene"])
    scenes = []
    for sid in sorted(by_scene):
        tracks = []
        for pid in sorted(by_scene[sid]):
            rs = sorted(by_scene[sid][pid], key=lambda r: r["frame"])
            frames = np.array([r["frame"] for r in rs])
            if np.any(np.diff(frames) <= 0):
                raise DataError(f"scene {sid}, person {pid}: duplicate frame index")
            tracks.append(PedTrack(
                person_id=pid,
                frames=frames,
                boxes=np.stack([r["box"] for r in rs]),
                poses=np.stack([r["pose"] for r in rs]),
                labels={t: np.array([r[t] for r in rs]) for t in TASKS},
                occlusion=np.array([r["occlusion_fraction"] for r in rs]),
            ))
        scenes.append(Scene(sid, contexts[sid], tracks))
    return scenes


def keep_pedestrian(track: PedTrack, min_visible: float = 0.25) -> bool:
    """Drop heavily occluded pedestrians and those lacking behaviour labels."""
    if 1.0 - float(np.mean(track.occlusion)) < min_visible:
        return False
    return all(np.all(track.labels[t] >= 0) for t in TASKS)


def ingest_annotations(path, min_visible: float = 0.25, load_mask_files: bool = True) -> list[Scene]:
    records = []
    files = annotation_files(path)
    for f in files:
        records.extend(read_records(f))
    scenes = group_records(records)
    for sc in scenes:
        keep = [keep_pedestrian(t, min_visible) for t in sc.tracks]
        sc.excluded = [t.person_id for t, k in zip(sc.tracks, keep) if not k]
        sc.tracks = [t for t, k in zip(sc.tracks, keep) if k]
    if load_mask_files and files:
        mask_dir = files[0].parent / "masks"
        for sc in scenes:
            load_scene_masks(sc, mask_dir)
    return [s for s in scenes if s.tracks]


def scene_records(scene: Scene):
    ctx = scene.context.to_record()
    for t in scene.tracks:
        for i, f in enumerate(t.frames):
            rec = {"scene_id": scene.scene_id, "frame": int(f), "person_id": t.person_id,
                   "box": [float(v) for v in t.boxes[i]],
                   "pose": [[float(v) for v in row] for row in t.poses[i]]}
            for task in TASKS:
                k = int(t.labels[task][i])
                rec[task] = LABELS[task][k] if k >= 0 else None
            rec["occlusion_fraction"] = float(t.occlusion[i])
            rec["scene"] = ctx
            yield rec


def write_annotations(scenes: list[Scene], out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "annotations.ndjson"
    with open(path, "w") as fh:
        for sc in scenes:
            for rec in scene_records(sc):
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    mask_dir = out_dir / "masks"
    for sc in scenes:
        if sc.masks is not None:
            save_scene_masks(sc, mask_dir)
    return path


# masks ----------------------------------------------------------------------

def save_scene_masks(scene: Scene, mask_dir):
    mask_dir = Path(mask_dir)
    mask_dir.mkdir(parents=True, exist_ok=True)
    m = np.ascontiguousarray(scene.masks, dtype=np.uint8)
    header = {"height": m.shape[1], "width": m.shape[2], "first_frame": scene.first_frame,
              "num_frames": m.shape[0], "image_width": scene.image_size[0], "image_height": scene.image_size[1]}
    (mask_dir / f"{scene.scene_id}.json").write_text(json.dumps(header, sort_keys=True))
    (mask_dir / f"{scene.scene_id}.bin").write_bytes(m.tobytes())


def load_scene_masks(scene: Scene, mask_dir) -> bool:
    head_p = Path(mask_dir) / f"{scene.scene_id}.json"
    bin_p = Path(mask_dir) / f"{scene.scene_id}.bin"
    if not head_p.exists():
        log.warning("scene %s has no mask file; an empty mask is used", scene.scene_id)
        return False
    h = json.loads(head_p.read_text())
    raw = np.frombuffer(bin_p.read_bytes(), dtype=np.uint8)
    n = h["num_frames"] * h["height"] * h["width"]
    if raw.size != n:
        raise DataError(f"{bin_p}: expected {n} bytes, found {raw.size}")
    masks = raw.reshape(h["num_frames"], h["height"], h["width"]).copy()
    if masks.max(initial=0) >= len(MASK_CLASSES):
        raise DataError(f"{bin_p}: class index outside [0, 4]")
    scene.masks = masks
    scene.first_frame = int(h["first_frame"])
    scene.image_size = (int(h.get("image_width", DEFAULT_IMAGE[0])), int(h.get("image_height", DEFAULT_IMAGE[1])))
    return True


def resize_mask(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resampling of a class-index grid."""
    h, w = grid.shape[-2:]
    if (h, w) == (height, width):
        return grid
    rows = np.minimum((np.arange(height) + 0.5) * h / height, h - 1).astype(int)
    cols = np.minimum((np.arange(width) + 0.5) * w / width, w - 1).astype(int)
    return grid[..., rows[:, None], cols[None, :]]
