"""Unreliable partial label learning with recursive separation."""

from .data import LabeledDataset, UpllDataset, audit, synth_gaussians, synthesize
from .separation import SeparationConfig, SeparationResult, run_recursive_separation
from .trainer import TrainConfig, TrainResult, train, train_augmented, train_baseline, train_general

__all__ = [
    "LabeledDataset", "UpllDataset", "audit", "synth_gaussians", "synthesize",
    "SeparationConfig", "SeparationResult", "run_recursive_separation",
    "TrainConfig", "TrainResult", "train", "train_augmented", "train_baseline", "train_general",
]
