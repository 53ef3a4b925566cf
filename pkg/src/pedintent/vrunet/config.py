"""Model and training configuration, plus the key = value config file format."""
from __future__ import annotations

import ast
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..datapipe.schema import TASKS


@dataclass(frozen=True)
class LossWeights:
    gait: float = 1.0
    attention: float = 1.0
    orientation: float = 1.0
    distraction: float = 1.0
    crossing: float = 1.0

    def __post_init__(self):
        vals = self.as_tuple()
        if any(v < 0 or not np.isfinite(v) for v in vals):
            raise ValueError("loss weights must be finite and >= 0")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, t) for t in TASKS)

    def scaled(self, c: float) -> "LossWeights":
        return LossWeights(*(c * v for v in self.as_tuple()))


@dataclass(frozen=True)
class VRUNetConfig:
    """Architecture widths default to the published ones.

    ``conv_channels`` is the pose/box conv width, ``scene_channels`` the two
    scene conv widths and ``scene_fc`` the four scene FC widths; the last
    scene FC width must equal ``embed``.
    """
    obs_len: int = 30
    horizon: int = 30
    mask_h: int = 90
    mask_w: int = 160
    hidden: int = 256
    conv_channels: int = 256
    scene_channels: tuple[int, int] = (256, 512)
    scene_fc: tuple[int, int, int, int] = (1024, 1024, 256, 256)
    embed: int = 256
    head_hidden: int = 256
    image_size: tuple[int, int] = (640, 360)
    use_scene: bool = True
    loss_weights: LossWeights = field(default_factory=LossWeights)
    lambda_reg: float = 3e-4
    alpha_action: float = 1.0
    beta_traj: float = 1.0

    def __post_init__(self):
        ints = (self.obs_len, self.horizon, self.mask_h, self.mask_w, self.hidden, self.conv_channels,
                self.embed, self.head_hidden, *self.scene_channels, *self.scene_fc, *self.image_size)
        if any(int(v) != v or v <= 0 for v in ints):
            raise ValueError("all sizes must be positive integers")
        if self.scene_fc[-1] != self.embed:
            raise ValueError("last scene FC width must equal embed")
        if self.lambda_reg < 0 or self.alpha_action < 0 or self.beta_traj < 0:
            raise ValueError("lambda_reg, alpha_action and beta_traj must be >= 0")

    @classmethod
    def tiny(cls, **kw) -> "VRUNetConfig":
        base = dict(obs_len=4, horizon=3, mask_h=8, mask_w=8, hidden=8, conv_channels=8, scene_channels=(8, 8),
                    scene_fc=(8, 8, 8, 8), embed=8, head_hidden=8)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights.as_tuple())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VRUNetConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        if "loss_weights" in d and not isinstance(d["loss_weights"], LossWeights):
            d["loss_weights"] = LossWeights(*d["loss_weights"])
        for k in ("scene_channels", "scene_fc", "image_size"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 32
    lr: float = 1e-5
    clip_norm: float = 5.0
    patience: int = 25
    lr_factor: float = 0.5
    teacher_forcing_epochs: int = 50
    flip: bool = False
    pixel_dropout: float = 0.0
    keypoint_noise: float = 0.0
    class_weights: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0 or self.clip_norm < 0:
            raise ValueError("lr and clip_norm must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; values are Python literals or bare words.

    Blank lines and ``#`` comments are ignored.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key.isidentifier():
            raise ValueError(f"line {lineno}: bad key {key!r}")
        try:
            out[key] = ast.literal_eval(val)
        except (ValueError, SyntaxError):
            out[key] = val
    return out


def format_config_text(d: dict) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in d.items())
