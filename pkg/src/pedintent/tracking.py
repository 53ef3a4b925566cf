"""Constant-velocity Kalman tracking with IoU/Hungarian association.

Boxes are ``(cx, cy, w, h)`` in pixels.  The filter state is
``(cx, cy, w, h, vcx, vcy, vw, vh)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

Q_POS = 1.0
Q_VEL = 0.25
R_POS = 1.0
INIT_VEL_VAR = 100.0


@dataclass
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray


def transition(dt: float) -> np.ndarray:
    F = np.eye(8)
    F[:4, 4:] = dt * np.eye(4)
    return F


def init_state(box, r: float = R_POS, vel_var: float = INIT_VEL_VAR) -> KalmanState:
    mean = np.zeros(8)
    mean[:4] = box
    cov = np.diag([r] * 4 + [vel_var] * 4).astype(float)
    return KalmanState(mean, cov)


def predict(state: KalmanState, dt: float = 1, q_pos: float = Q_POS, q_vel: float = Q_VEL) -> KalmanState:
    if dt < 1:
        raise ValueError(f"dt must be >= 1 frame, got {dt}")
    F = transition(dt)
    Q = np.diag([q_pos] * 4 + [q_vel] * 4)
    cov = F @ state.cov @ F.T + Q
    return KalmanState(F @ state.mean, 0.5 * (cov + cov.T))


def update(state: KalmanState, obs, r: float = R_POS) -> KalmanState:
    """Standard Kalman correction with measurement matrix ``[I 0]``.

    Uses the Joseph form so the posterior stays symmetric positive-definite.
    """
    z = np.asarray(obs, dtype=float)
    H = np.zeros((4, 8))
    H[:, :4] = np.eye(4)
    R = r * np.eye(4)
    S = H @ state.cov @ H.T + R
    try:
        K = np.linalg.solve(S, H @ state.cov).T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("innovation covariance is singular; check noise settings") from exc
    mean = state.mean + K @ (z - H @ state.mean)
    A = np.eye(8) - K @ H
    cov = A @ state.cov @ A.T + K @ R @ K.T
    return KalmanState(mean, 0.5 * (cov + cov.T))


def iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0, bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return float(inter / union) if union > 0 else 0.0


def iou_matrix(tracks, detections) -> np.ndarray:
    m = np.zeros((len(tracks), len(detections)))
    for i, t in enumerate(tracks):
        for j, d in enumerate(detections):
            m[i, j] = iou(t, d)
    return m


@dataclass
class Assignment:
    matches: list[tuple[int, int]]
    unmatched_tracks: list[int]
    unmatched_detections: list[int]


def associate(tracks, detections, iou_min: float = 0.3) -> Assignment:
    """One-to-one matching maximizing total IoU; pairs under ``iou_min`` are dropped.

    Row order of ``tracks`` is the tie-break priority, so callers pass tracks
    sorted by id.
    """
    if not 0.0 <= iou_min <= 1.0:
        raise ValueError("iou_min must lie in [0, 1]")
    nt, nd = len(tracks), len(detections)
    if nt == 0 or nd == 0:
        return Assignment([], list(range(nt)), list(range(nd)))
    m = iou_matrix(tracks, detections)
    rows, cols = linear_sum_assignment(m, maximize=True)
    matches = [(int(r), int(c)) for r, c in zip(rows, cols) if m[r, c] >= iou_min and m[r, c] > 0]
    mt = {r for r, _ in matches}
    md = {c for _, c in matches}
    return Assignment(matches, [i for i in range(nt) if i not in mt], [j for j in range(nd) if j not in md])


@dataclass
class Track:
    id: int
    state: KalmanState
    history: list = field(default_factory=list)  # (frame, box, pose)
    age: int = 0
    misses: int = 0
    last_frame: int = -1

    @property
    def box(self) -> np.ndarray:
        return self.state.mean[:4].copy()


class Tracker:
    """Single-scene tracker; feed frames in increasing order through ``step``."""

    def __init__(self, iou_min: float = 0.3, max_misses: int = 15, q_pos: float = Q_POS,
                 q_vel: float = Q_VEL, r: float = R_POS):
        self.iou_min = iou_min
        self.max_misses = max_misses
        self.q_pos, self.q_vel, self.r = q_pos, q_vel, r
        self.tracks: list[Track] = []
        self.retired: list[Track] = []
        self._next_id = 0
        self._frame: int | None = None

    def step(self, frame: int, detections) -> list[Track]:
        """Advance to ``frame`` with a list of ``(box, pose)`` detections."""
        if self._frame is not None and frame <= self._frame:
            raise ValueError(f"frame {frame} is not after {self._frame}")
        dt = 1 if self._frame is None else frame - self._frame
        self._frame = frame
        self.tracks.sort(key=lambda t: t.id)
        for t in self.tracks:
            t.state = predict(t.state, dt, self.q_pos, self.q_vel)
            t.age += dt
        boxes = [np.asarray(b, dtype=float) for b, _ in detections]
        res = associate([t.box for t in self.tracks], boxes, self.iou_min)
        for ti, di in res.matches:
            t = self.tracks[ti]
            t.state = update(t.state, boxes[di], self.r)
            t.history.append((frame, boxes[di], detections[di][1]))
            t.misses = 0
            t.last_frame = frame
        for ti in res.unmatched_tracks:
            self.tracks[ti].misses += dt
        for di in res.unmatched_detections:
            t = Track(self._next_id, init_state(boxes[di], self.r))
            self._next_id += 1
            t.history.append((frame, boxes[di], detections[di][1]))
            t.last_frame = frame
            self.tracks.append(t)
        alive = []
        for t in self.tracks:
            (self.retired if t.misses > self.max_misses else alive).append(t)
        self.tracks = alive
        return self.tracks

    def all_tracks(self) -> list[Track]:
        return sorted(self.tracks + self.retired, key=lambda t: t.id)


def track_scene(frames, **kwargs) -> list[Track]:
    """Run a tracker over ``{frame: [(box, pose), ...]}`` and return every track."""
    tr = Tracker(**kwargs)
    for f in sorted(frames):
        tr.step(f, frames[f])
    return tr.all_tracks()
