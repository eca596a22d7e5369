"""Dictionary-pair patch classification with a shared low-rank dictionary.

Training alternates exact closed-form block solves over per-class synthesis
dictionaries, per-class analysis operators, and a nuclear-norm-regularized
shared pair; classification is solver-free (two matrix products per class)
and aggregates patch labels into image-level decisions.
"""

from . import exceptions
from .classifier import (
    DecisionRule,
    ImageDecision,
    PatchGrid,
    balanced_accuracy,
    classify_grid,
    classify_patch,
    decide_image,
    learn_threshold,
    predict_classes,
    score_largest_region,
    score_ratio,
)
from .data import (
    ImageBuffer,
    RegionMask,
    SynthSpec,
    build_training_set,
    center_mask,
    devectorize_patch,
    downsample,
    extract_grid_patches,
    extract_random_patches,
    load_image,
    synth_generate,
    to_grayscale,
    vectorize_patch,
)
from .estimator import AlsfClassifier
from .model import (
    AlsfModel,
    Codes,
    Hyperparams,
    TrainingSet,
    class_residual,
    encode,
    total_objective,
)
from .model_io import load_model, save_model
from .trainer import TrainReport, cross_validate, init_model, train

__version__ = "0.1.0"

__all__ = [
    "AlsfClassifier",
    "AlsfModel",
    "Codes",
    "DecisionRule",
    "Hyperparams",
    "ImageBuffer",
    "ImageDecision",
    "PatchGrid",
    "RegionMask",
    "SynthSpec",
    "TrainReport",
    "TrainingSet",
    "balanced_accuracy",
    "build_training_set",
    "center_mask",
    "class_residual",
    "classify_grid",
    "classify_patch",
    "cross_validate",
    "decide_image",
    "devectorize_patch",
    "downsample",
    "encode",
    "exceptions",
    "extract_grid_patches",
    "extract_random_patches",
    "init_model",
    "learn_threshold",
    "load_image",
    "load_model",
    "predict_classes",
    "save_model",
    "score_largest_region",
    "score_ratio",
    "synth_generate",
    "to_grayscale",
    "total_objective",
    "train",
    "vectorize_patch",
]
