"""Annotation ingest, synthetic scenes, windowing, augmentation and corpus files."""
from .augment import augment, flip_sample
from .corpus import read_corpus, write_corpus
from .schema import (DEFAULT_IMAGE, LABELS, MASK_CLASSES, NUM_CLASSES, TASKS, DataError, PedTrack, Scene,
                     SceneContext, ingest_annotations, write_annotations)
from .synth import SynthScene, SynthSpec, synthesize_scene, synthesize_scenes
from .windows import (BuildStats, SequenceSample, WindowConfig, build_samples, filter_tracks, make_windows,
                      pad_track, split, window_starts)

__all__ = [
    "augment", "flip_sample", "read_corpus", "write_corpus", "DEFAULT_IMAGE", "LABELS", "MASK_CLASSES",
    "NUM_CLASSES", "TASKS", "DataError", "PedTrack", "Scene", "SceneContext", "ingest_annotations",
    "write_annotations", "SynthScene", "SynthSpec", "synthesize_scene", "synthesize_scenes", "BuildStats",
    "SequenceSample", "WindowConfig", "build_samples", "filter_tracks", "make_windows", "pad_track", "split",
    "window_starts",
]
