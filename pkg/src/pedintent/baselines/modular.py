"""Separately trained per-task models on hand-crafted pose features.

Feature normalization: lengths and positions are divided by the box height
of the window's last observed frame, and positions are taken relative to
that frame's box centre, so features do not depend on where in the image
the person stands.  Angles and visibilities are unchanged.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..datapipe.schema import NUM_CLASSES, TASKS, SceneContext
from ..geometry import attention_sequence, distraction_sequence, gait_sequence
from .resnet1d import Resnet1D, Resnet1DConfig, fit_resnet
from .svm import SvmModel, train_svc

INTENT_FEATURES = ("gait", "attention", "distraction", "orientation", "traffic_light", "traffic_sign", "crosswalk",
                   "lane_narrow", "lane_wide")


def _anchor(sample):
    cx, cy, _, h = np.asarray(sample.boxes[-1], dtype=np.float64)
    return cx, cy, max(h, 1e-6)


def gait_window(sample) -> np.ndarray:
    """``(N, 6)``: d1, d2 and hip position scaled by box height; angles as is."""
    f = gait_sequence(sample.poses)
    cx, cy, h = _anchor(sample)
    f[:, 0:2] /= h
    f[:, 4] = (f[:, 4] - cx) / h
    f[:, 5] = (f[:, 5] - cy) / h
    return f


def attention_window(sample) -> np.ndarray:
    """``(N, 21)``: (x, y, v) of the seven upper-body joints, positions body-relative."""
    f = attention_sequence(sample.poses).reshape(-1, 7, 3)
    cx, cy, h = _anchor(sample)
    f[..., 0] = (f[..., 0] - cx) / h
    f[..., 1] = (f[..., 1] - cy) / h
    return f.reshape(-1, 21)


def distraction_vector(sample, average: bool = True) -> np.ndarray:
    """Four arm angles, averaged over the window (or stacked to ``N*4``)."""
    f = distraction_sequence(sample.poses)
    return f.mean(axis=0) if average else f.reshape(-1)


def build_intent_features(gait, attention, distraction, orientation, context: SceneContext,
                          n_frames: int | None = None) -> np.ndarray:
    """``(N, 9)`` rows of [gait, attention, distraction, orientation code, 5 context bits].

    Each action argument is a scalar (repeated for every frame) or a
    length-N sequence of per-frame predictions.
    """
    cols = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in (gait, attention, distraction, orientation)]
    n = max(len(c) for c in cols) if n_frames is None else n_frames
    rows = np.zeros((n, 9))
    for j, c in enumerate(cols):
        if len(c) not in (1, n):
            raise ValueError(f"{INTENT_FEATURES[j]} has {len(c)} values, expected 1 or {n}")
        rows[:, j] = c
    if np.any((rows[:, 3] < 0) | (rows[:, 3] > 3)):
        raise ValueError("orientation code must lie in 0..3")
    rows[:, 4:] = context.as_array()
    return rows


@dataclass
class ModularConfig:
    gait_epochs: int = 100
    attn_epochs: int = 150
    lr: float = 1e-4
    batch_size: int = 32
    stem_channels: int = 32
    channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    attn_weights: tuple[float, float] = (1.0, 1.0)
    svm_C: float = 1.0
    svm_gamma: float | None = None
    distraction_average: bool = True
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ModularConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown modular config keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("channels", "attn_weights"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def _labels(samples, task):
    return np.array([s.label(task) for s in samples], dtype=np.int64)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


@dataclass
class ModularPredictions:
    """Per-task class distributions (binary SVM scores squashed by a sigmoid)."""
    probs: dict[str, np.ndarray]
    crossing_score: np.ndarray
    intent_features: np.ndarray = field(repr=False, default=None)


class ModularPipeline:
    def __init__(self, cfg: ModularConfig = ModularConfig()):
        self.cfg = cfg
        self.gait: Resnet1D | None = None
        self.attn: Resnet1D | None = None
        self.distraction: SvmModel | None = None
        self.crossing: SvmModel | None = None

    def _resnet(self, n, f, heads, seed):
        rc = Resnet1DConfig(n, f, heads, self.cfg.stem_channels, self.cfg.channels)
        return Resnet1D(rc, seed=seed)

    def fit_gait(self, samples):
        x = np.stack([gait_window(s) for s in samples])
        self.gait = self._resnet(x.shape[1], 6, (2,), self.cfg.seed)
        return fit_resnet(self.gait, x, [_labels(samples, "gait")], epochs=self.cfg.gait_epochs, lr=self.cfg.lr,
                          batch_size=self.cfg.batch_size, seed=self.cfg.seed)

    def fit_attention(self, samples):
        x = np.stack([attention_window(s) for s in samples])
        self.attn = self._resnet(x.shape[1], 21, (2, 4), self.cfg.seed + 1)
        return fit_resnet(self.attn, x, [_labels(samples, "attention"), _labels(samples, "orientation")],
                          weights=self.cfg.attn_weights, epochs=self.cfg.attn_epochs, lr=self.cfg.lr,
                          batch_size=self.cfg.batch_size, seed=self.cfg.seed + 1)

    def fit_distraction(self, samples):
        x = np.stack([distraction_vector(s, self.cfg.distraction_average) for s in samples])
        self.distraction = train_svc(x, _labels(samples, "distraction"), self.cfg.svm_gamma, self.cfg.svm_C)
        return self.distraction

    def action_predictions(self, samples) -> dict[str, np.ndarray]:
        g = self.gait.predict_proba(np.stack([gait_window(s) for s in samples]))[0]
        a, o = self.attn.predict_proba(np.stack([attention_window(s) for s in samples]))
        d = self.distraction.decision_function(
            np.stack([distraction_vector(s, self.cfg.distraction_average) for s in samples]))
        pd = _sigmoid(d)
        return {"gait": g, "attention": a, "orientation": o, "distraction": np.column_stack([1 - pd, pd])}

    def intent_matrix(self, samples, actions: dict[str, np.ndarray]) -> np.ndarray:
        rows = []
        for i, s in enumerate(samples):
            m = build_intent_features(actions["gait"][i].argmax(), actions["attention"][i].argmax(),
                                      actions["distraction"][i].argmax(), actions["orientation"][i].argmax(),
                                      s.context, n_frames=s.obs_len)
            rows.append(m.reshape(-1))
        return np.asarray(rows)

    def fit_crossing(self, samples):
        feats = self.intent_matrix(samples, self.action_predictions(samples))
        self.crossing = train_svc(feats, _labels(samples, "crossing"), self.cfg.svm_gamma, self.cfg.svm_C)
        return self.crossing

    def fit(self, samples) -> "ModularPipeline":
        """Train the action models, then the crossing SVM on their predictions."""
        if not samples:
            raise ValueError("no training samples")
        self.fit_gait(samples)
        self.fit_attention(samples)
        self.fit_distraction(samples)
        self.fit_crossing(samples)
        return self

    def predict(self, samples) -> ModularPredictions:
        actions = self.action_predictions(samples)
        feats = self.intent_matrix(samples, actions)
        score = self.crossing.decision_function(feats)
        pc = _sigmoid(score)
        probs = dict(actions)
        probs["crossing"] = np.column_stack([1 - pc, pc])
        return ModularPredictions(probs, score, feats)

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.gait.save(out / "gait.ckpt")
        self.attn.save(out / "attention.ckpt")
        self.distraction.save(out / "distraction_svm.json")
        self.crossing.save(out / "crossing_svm.json")
        (out / "modular.json").write_text(json.dumps(asdict(self.cfg)))

    @classmethod
    def load(cls, out_dir) -> "ModularPipeline":
        out = Path(out_dir)
        p = cls(ModularConfig.from_dict(json.loads((out / "modular.json").read_text())))
        p.gait = Resnet1D.load(out / "gait.ckpt")
        p.attn = Resnet1D.load(out / "attention.ckpt")
        p.distraction = SvmModel.load(out / "distraction_svm.json")
        p.crossing = SvmModel.load(out / "crossing_svm.json")
        return p


def evaluate_modular(pipe: ModularPipeline, samples) -> dict:
    from ..metrics import task_ap
    pred = pipe.predict(samples)
    out = {}
    for t in TASKS:
        y = _labels(samples, t)
        p = pred.probs[t]
        assert p.shape[1] == NUM_CLASSES[t]
        out[f"ap_{t}"] = task_ap(p, y)
        out[f"acc_{t}"] = float(np.mean(p.argmax(1) == y))
    return out
