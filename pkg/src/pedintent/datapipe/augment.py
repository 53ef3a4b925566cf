"""Sample augmentation: horizontal flip, mask pixel dropout, keypoint noise."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..geometry import flip_pose
from .schema import ORIENT_FLIP
from .windows import SequenceSample


def flip_sample(s: SequenceSample) -> SequenceSample:
    w = s.image_size[0]
    boxes = s.boxes.copy()
    boxes[:, 0] = w - boxes[:, 0]
    fut = s.future_centers.copy()
    fut[:, 0] = w - fut[:, 0]
    return replace(s, poses=flip_pose(s.poses, w), boxes=boxes, future_centers=fut,
                   scene=np.ascontiguousarray(s.scene[:, :, ::-1]), orientation=int(ORIENT_FLIP[s.orientation]))


def augment(s: SequenceSample, flip: bool = False, pixel_dropout: float = 0.0, noise: float = 0.0,
            seed: int = 0) -> SequenceSample:
    """Apply the requested operations in the order flip, dropout, noise.

    Dropped mask cells are set to class index 0.  ``noise`` is the standard
    deviation in pixels added to keypoint x/y.
    """
    rng = np.random.default_rng(seed)
    out = flip_sample(s) if flip else replace(s)
    if pixel_dropout > 0:
        drop = rng.random(out.scene.shape) < pixel_dropout
        out = replace(out, scene=np.where(drop, 0, out.scene).astype(np.uint8))
    if noise > 0:
        poses = out.poses.copy()
        poses[..., :2] += rng.normal(0.0, noise, poses[..., :2].shape)
        out = replace(out, poses=poses)
    return out
