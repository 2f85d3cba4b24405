"""Predictive multiplicity and fairness inside ambiguous regions.

The package finds sets of near-optimal classifiers (epsilon-level sets),
marks the points those classifiers disagree on, and fits a randomized
meta-classifier that equalizes group error rates on those points only.
"""

from .data_model import (
    AmbiguityMask,
    Dataset,
    KernelModel,
    Kernel,
    LevelSet,
    LinearModel,
    MetaClassifier,
    SplitAssignment,
    model_from_dict,
    model_to_dict,
    predict,
    predict_many,
    signed_distance,
)

__all__ = [
    "AmbiguityMask",
    "Dataset",
    "Kernel",
    "KernelModel",
    "LevelSet",
    "LinearModel",
    "MetaClassifier",
    "SplitAssignment",
    "model_from_dict",
    "model_to_dict",
    "predict",
    "predict_many",
    "signed_distance",
]

__version__ = "0.1.0"
