"""Hand-crafted per-frame pose features for the modular baselines.

A pose is a ``(17, 3)`` array of ``(x, y, visibility)`` rows in COCO order
(see ``JOINTS``).  Visibility never masks the geometry: occluded joints
still contribute their coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

JOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)
J = {name: i for i, name in enumerate(JOINTS)}
NUM_JOINTS = 17

# index permutation that exchanges left/right joints
FLIP_PERM = np.array([0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15])

UPPER_BODY = (J["nose"], J["left_eye"], J["right_eye"], J["left_ear"], J["right_ear"],
              J["left_shoulder"], J["right_shoulder"])


def check_pose(pose) -> np.ndarray:
    p = np.asarray(pose, dtype=np.float64)
    if p.shape != (NUM_JOINTS, 3):
        raise ValueError(f"pose must have shape (17, 3), got {p.shape}")
    return p


def vector_angle(u: np.ndarray, v: np.ndarray) -> tuple[float, bool]:
    """Unsigned angle between two 2D vectors in [0, pi].

    A zero-length vector yields ``(0.0, False)``.
    """
    nu = np.hypot(u[0], u[1])
    nv = np.hypot(v[0], v[1])
    if nu == 0.0 or nv == 0.0:
        return 0.0, False
    cos = (u[0] * v[0] + u[1] * v[1]) / (nu * nv)
    return float(np.arccos(min(1.0, max(-1.0, cos)))), True


def joint_angle(a: np.ndarray, vertex: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    """Interior angle at ``vertex`` formed with ``a`` and ``b``."""
    return vector_angle(a[:2] - vertex[:2], b[:2] - vertex[:2])


@dataclass(frozen=True)
class GaitFeatures:
    d1: float
    d2: float
    theta1: float
    theta2: float
    x: float
    y: float
    valid: tuple[bool, bool] = (True, True)

    def as_array(self) -> np.ndarray:
        return np.array([self.d1, self.d2, self.theta1, self.theta2, self.x, self.y])


@dataclass(frozen=True)
class DistractionFeatures:
    theta_l: float
    theta_r: float
    theta_lr_hands: float
    theta_lr_upper: float
    valid: tuple[bool, bool, bool, bool] = (True, True, True, True)

    def as_array(self) -> np.ndarray:
        return np.array([self.theta_l, self.theta_r, self.theta_lr_hands, self.theta_lr_upper])


def gait_features(pose) -> GaitFeatures:
    """Knee-ankle distances, knee angles and hip center; index 1 is the right leg."""
    p = check_pose(pose)
    r_hip, r_knee, r_ankle = p[J["right_hip"]], p[J["right_knee"]], p[J["right_ankle"]]
    l_hip, l_knee, l_ankle = p[J["left_hip"]], p[J["left_knee"]], p[J["left_ankle"]]
    d1 = float(np.hypot(*(r_ankle[:2] - r_knee[:2])))
    d2 = float(np.hypot(*(l_ankle[:2] - l_knee[:2])))
    t1, ok1 = joint_angle(r_hip, r_knee, r_ankle)
    t2, ok2 = joint_angle(l_hip, l_knee, l_ankle)
    x = float((l_hip[0] + r_hip[0]) / 2)
    y = float((l_hip[1] + r_hip[1]) / 2)
    return GaitFeatures(d1, d2, t1, t2, x, y, (ok1, ok2))


def attention_features(pose) -> np.ndarray:
    """(x, y, v) of nose, eyes, ears and shoulders, flattened to 21 values."""
    p = check_pose(pose)
    return p[list(UPPER_BODY)].reshape(-1).copy()


def distraction_features(pose) -> DistractionFeatures:
    p = check_pose(pose)
    ls, rs = p[J["left_shoulder"], :2], p[J["right_shoulder"], :2]
    le, re = p[J["left_elbow"], :2], p[J["right_elbow"], :2]
    lw, rw = p[J["left_wrist"], :2], p[J["right_wrist"], :2]
    tl, ok_l = vector_angle(ls - le, lw - le)
    tr, ok_r = vector_angle(rs - re, rw - re)
    th, ok_h = vector_angle(lw - le, rw - re)
    tu, ok_u = vector_angle(le - ls, re - rs)
    return DistractionFeatures(tl, tr, th, tu, (ok_l, ok_r, ok_h, ok_u))


def normalize_pose(pose, width: float, height: float) -> np.ndarray:
    if width <= 0 or height <= 0:
        raise ValueError(f"image dimensions must be positive, got {width}x{height}")
    p = check_pose(pose).copy()
    p[:, 0] /= width
    p[:, 1] /= height
    return p


def denormalize_pose(pose, width: float, height: float) -> np.ndarray:
    if width <= 0 or height <= 0:
        raise ValueError(f"image dimensions must be positive, got {width}x{height}")
    p = check_pose(pose).copy()
    p[:, 0] *= width
    p[:, 1] *= height
    return p


def flip_pose(pose, width: float) -> np.ndarray:
    """Mirror horizontally (x -> width - x) and exchange left/right joints."""
    p = np.asarray(pose, dtype=np.float64)
    out = p[..., FLIP_PERM, :].copy()
    out[..., 0] = width - out[..., 0]
    return out


# sequence helpers used by the baselines -----------------------------------

def gait_sequence(poses) -> np.ndarray:
    """``(N, 17, 3)`` poses -> ``(N, 6)`` gait feature rows."""
    return np.stack([gait_features(p).as_array() for p in poses])


def attention_sequence(poses) -> np.ndarray:
    return np.stack([attention_features(p) for p in poses])


def distraction_sequence(poses) -> np.ndarray:
    return np.stack([distraction_features(p).as_array() for p in poses])
