"""End-to-end orchestration shared by the CLI, the demos and the acceptance suite."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .eeg_io import DatasetManifest
from .evaluation import FoldSpec, average_folds, evaluate
from .models import Ensemble, EnsembleConfig, StudentConfig, build_student
from .msfs import FREQUENCIES, WINDOW_LENGTHS, WINDOW_STEPS, SplitMix64, build_subspace, draw_sampling_params, load_montages
from .seeding import stream, sub_seed
from .training import KdConfig, TrainConfig, init_weights, train_ensemble, train_student

logger = logging.getLogger(__name__)


def draw_member_params(seed: int, n_members: int = 3, frequencies=FREQUENCIES, lengths=WINDOW_LENGTHS,
                       steps=WINDOW_STEPS):
    """One independent (f, w, o) draw per ensemble member from the "sampling" stream."""
    rng = SplitMix64(sub_seed(seed, "sampling"))
    return [draw_sampling_params(rng, frequencies, lengths, steps) for _ in range(n_members)]


def featurize(manifest: DatasetManifest, params_list, out_size=(112, 112), literal_s1: bool = False,
              threads: int = 1, montages=None):
    if montages is None and len(manifest):
        montages = load_montages(manifest)
    return [build_subspace(manifest, p, out_size, literal_s1, montages, threads) for p in params_list]


def subsample_events(manifest: DatasetManifest, event_ids, fraction: float, seed: int) -> np.ndarray:
    """Class-stratified random subset (at least one event per present class)."""
    event_ids = np.asarray(event_ids)
    if fraction >= 1:
        return event_ids
    rng = stream(seed, "subsample")
    labels = manifest.labels[event_ids]
    keep = []
    for c in np.unique(labels):
        idx = event_ids[labels == c]
        n = max(1, int(round(fraction * len(idx))))
        keep.extend(rng.choice(idx, size=n, replace=False).tolist())
    return np.sort(np.array(keep, dtype=np.int64))


@dataclass
class FoldResult:
    fold: int
    train_events: list
    test_events: list
    history: dict
    metrics: dict
    model: object = field(default=None, repr=False)


def train_fold_ensemble(ens_cfg: EnsembleConfig, subspaces, train_events, train_cfg: TrainConfig, init_seed: int):
    ensemble = Ensemble.build(ens_cfg)
    for i, m in enumerate(ensemble.members):
        init_weights(m, train_cfg.init_std, sub_seed(init_seed, f"member{i}"))
    train_subs = [s.for_events(train_events) for s in subspaces]
    history = train_ensemble(ensemble, train_subs, train_cfg)
    return ensemble, history


def cross_validate_ensemble(manifest: DatasetManifest, subspaces, folds: FoldSpec, ens_cfg: EnsembleConfig,
                            train_cfg: TrainConfig, train_fraction: float = 1.0, aggregation: str = "mean",
                            keep_models: bool = False) -> dict:
    """Train and test one ensemble per fold; returns per-fold results and fold averages."""
    results = []
    for fold in range(folds.k):
        train_ev, test_ev = folds.train_test(fold)
        if len(test_ev) == 0:
            continue
        train_ev = subsample_events(manifest, train_ev, train_fraction, sub_seed(train_cfg.seed, f"fold{fold}"))
        ensemble, history = train_fold_ensemble(ens_cfg, subspaces, train_ev, train_cfg,
                                                sub_seed(train_cfg.seed, f"init-fold{fold}"))
        metrics = evaluate(ensemble, subspaces, test_ev, aggregation)
        logger.info("fold %d: window F1 %.3f, event F1 %.3f", fold, metrics["window"]["weighted_f1"],
                    metrics["event"]["weighted_f1"])
        results.append(FoldResult(fold, train_ev.tolist(), test_ev.tolist(), history, metrics,
                                  ensemble if keep_models else None))
    return {"folds": results, "mean": average_folds([r.metrics for r in results])}


def cross_validate_student(manifest: DatasetManifest, subspaces, folds: FoldSpec, ens_cfg: EnsembleConfig,
                           student_cfg: StudentConfig, train_cfg: TrainConfig, kd: KdConfig | None,
                           teachers=None, aggregation: str = "mean", keep_models: bool = False) -> dict:
    """Per fold: train (or reuse) a teacher ensemble, then a student on the first subspace.

    ``kd=None`` trains the student on plain cross-entropy (beta=1, no
    distillation term) and needs no teacher.
    """
    results = []
    for fold in range(folds.k):
        train_ev, test_ev = folds.train_test(fold)
        if len(test_ev) == 0:
            continue
        train_subs = [s.for_events(train_ev) for s in subspaces]
        student = init_weights(build_student(student_cfg), train_cfg.init_std,
                               sub_seed(train_cfg.seed, f"student-fold{fold}"))
        if kd is None:
            plain = KdConfig(alpha=0, beta=1, gamma=0)
            dummy = np.zeros((len(train_subs[0]), student_cfg.num_classes), np.float32)
            history = train_student(student, None, train_subs[0], train_cfg, plain, teacher_logits=dummy)
        else:
            if teachers is not None:
                teacher = teachers[fold]
            else:
                teacher, _ = train_fold_ensemble(ens_cfg, subspaces, train_ev, train_cfg,
                                                 sub_seed(train_cfg.seed, f"init-fold{fold}"))
            history = train_student(student, teacher, train_subs[0], train_cfg, kd, teacher_subspaces=train_subs)
        metrics = evaluate(student, subspaces[0], test_ev, aggregation)
        logger.info("student fold %d: window F1 %.3f, event F1 %.3f", fold, metrics["window"]["weighted_f1"],
                    metrics["event"]["weighted_f1"])
        results.append(FoldResult(fold, train_ev.tolist(), test_ev.tolist(), history, metrics,
                                  student if keep_models else None))
    return {"folds": results, "mean": average_folds([r.metrics for r in results])}
