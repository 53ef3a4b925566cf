"""Pedestrian action, crossing-intent and trajectory prediction from pose, box and scene-mask sequences."""

__version__ = "0.1.0"
