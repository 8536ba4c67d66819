"""Gaussian and flow-based likelihoods under model misspecification.

Toy regression problems with closed-form ground truth, three hypothesis
classes (constant-variance Gaussian, input-dependent Gaussian, spline flow),
mean-field Bayesian variants and input-dependent uncertainty measures.
"""
from .datasets import Dataset, GroundTruth, generate, make_test_set
from .training import TrainConfig, TrainedModel, evaluate, reproduce_table, train
from .uncertainty import PredictiveEnsemble, UncertaintyCurve, uncertainty_curve

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "GroundTruth",
    "PredictiveEnsemble",
    "TrainConfig",
    "TrainedModel",
    "UncertaintyCurve",
    "evaluate",
    "generate",
    "make_test_set",
    "reproduce_table",
    "train",
    "uncertainty_curve",
]
