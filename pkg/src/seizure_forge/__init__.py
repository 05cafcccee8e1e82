"""Seizure-type classification from scalp EEG.

Saliency-encoded spectrograms are drawn from several sampling subspaces,
classified by an ensemble of densely connected networks and optionally
distilled into a compact student.  Everything, including the autodiff
engine, runs on numpy and scipy.
"""
__version__ = "0.1.0"

from .eeg_io import NUM_CLASSES, SEIZURE_TYPES, DatasetManifest, SeizureEvent, load_manifest, read_edf
from .evaluation import evaluate, patient_wise_folds, seizure_wise_folds, weighted_f1
from .models import Ensemble, EnsembleConfig, StudentConfig, build_student, profile
from .msfs import FeatureSubspace, SamplingParams, build_subspace
from .spectrogram import compute_ft_map, compute_s1, compute_s2, saliency_spectrogram
from .training import KdConfig, TrainConfig, train_ensemble, train_student

__all__ = [
    "__version__", "NUM_CLASSES", "SEIZURE_TYPES", "DatasetManifest", "SeizureEvent", "load_manifest", "read_edf",
    "evaluate", "patient_wise_folds", "seizure_wise_folds", "weighted_f1",
    "Ensemble", "EnsembleConfig", "StudentConfig", "build_student", "profile",
    "FeatureSubspace", "SamplingParams", "build_subspace",
    "compute_ft_map", "compute_s1", "compute_s2", "saliency_spectrogram",
    "KdConfig", "TrainConfig", "train_ensemble", "train_student",
]
