"""Modular per-task baselines: 1D ResNet-10 classifiers and RBF SVMs."""
from .modular import (INTENT_FEATURES, ModularConfig, ModularPipeline, attention_window, build_intent_features,
                      distraction_vector, evaluate_modular, gait_window)
from .resnet1d import Resnet1D, Resnet1DConfig, fit_resnet
from .svm import SvmModel, kkt_violations, rbf_kernel, train_svc

__all__ = [
    "INTENT_FEATURES", "ModularConfig", "ModularPipeline", "attention_window", "build_intent_features",
    "distraction_vector", "evaluate_modular", "gait_window", "Resnet1D", "Resnet1DConfig", "fit_resnet",
    "SvmModel", "kkt_violations", "rbf_kernel", "train_svc",
]
