"""Cross-validation folds, confusion matrices, weighted F1 and model evaluation."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .eeg_io import NUM_CLASSES, SEIZURE_TYPES, DatasetManifest
from .models import Ensemble, predict_logits
from .msfs import FeatureSubspace, align_windows
from .seeding import stream

logger = logging.getLogger(__name__)


class FoldError(ValueError):
    pass


@dataclass
class FoldSpec:
    mode: str  # "seizure" or "patient"
    k: int
    assignments: np.ndarray  # fold index per manifest event
    seed: int

    def train_test(self, fold: int):
        test = np.flatnonzero(self.assignments == fold)
        train = np.flatnonzero(self.assignments != fold)
        return train, test

    def to_dict(self):
        return {"mode": self.mode, "k": self.k, "seed": self.seed, "assignments": self.assignments.tolist()}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def seizure_wise_folds(manifest: DatasetManifest, k: int = 5, seed: int = 0) -> FoldSpec:
    """Class-stratified round-robin over seizures shuffled per class."""
    labels = manifest.labels
    rng = stream(seed, "folds")
    assign = np.full(len(labels), -1, dtype=np.int64)
    offset = 0
    for c in range(NUM_CLASSES):
        idx = np.flatnonzero(labels == c)
        if len(idx) == 0:
            continue
        if len(idx) < k:
            logger.warning("class %s has %d seizure(s), fewer than %d folds", SEIZURE_TYPES[c], len(idx), k)
        idx = idx[rng.permutation(len(idx))]
        # rotate the starting fold so totals stay balanced across classes
        assign[idx] = (offset + np.arange(len(idx))) % k
        offset = (offset + len(idx)) % k
    return FoldSpec("seizure", k, assign, seed)


def patient_wise_folds(manifest: DatasetManifest, k: int = 3, seed: int = 0) -> FoldSpec:
    """Assign whole patients to folds, balancing per-class seizure counts greedily.

    Classes with the fewest patients are placed first so that scarce classes
    are spread one patient per fold; ties break on per-class seizure load and
    then total load.
    """
    labels = manifest.labels
    patients = manifest.patients
    uniq = sorted(set(patients))
    counts = {p: np.zeros(NUM_CLASSES, dtype=np.int64) for p in uniq}
    for p, y in zip(patients, labels):
        counts[p][y] += 1
    present = [c for c in range(NUM_CLASSES) if (labels == c).any()]
    for c in present:
        n_pat = sum(1 for p in uniq if counts[p][c] > 0)
        if n_pat < k:
            raise FoldError(
                f"class {SEIZURE_TYPES[c]} has data from only {n_pat} patient(s); "
                f"patient-wise {k}-fold validation needs at least {k}"
            )

    rng = stream(seed, "folds")
    shuffled = [uniq[i] for i in rng.permutation(len(uniq))]
    fold_of: dict[str, int] = {}
    load = np.zeros((k, NUM_CLASSES), dtype=np.int64)
    patients_per_class = np.zeros((k, NUM_CLASSES), dtype=np.int64)
    order = sorted(present, key=lambda c: (sum(1 for p in uniq if counts[p][c] > 0), -int((labels == c).sum()), c))
    for c in order:
        holders = [p for p in shuffled if counts[p][c] > 0 and p not in fold_of]
        holders.sort(key=lambda p: -counts[p][c])
        for p in holders:
            f = min(range(k), key=lambda f: (patients_per_class[f, c], load[f, c], load[f].sum(), f))
            fold_of[p] = f
            load[f] += counts[p]
            patients_per_class[f] += counts[p] > 0
    for c in present:
        if (patients_per_class[:, c] == 0).any():
            logger.warning("class %s is absent from some patient-wise folds", SEIZURE_TYPES[c])
    assign = np.array([fold_of[p] for p in patients], dtype=np.int64)
    return FoldSpec("patient", k, assign, seed)


# --------------------------------------------------------------------------- metrics

def confusion_matrix(truth, predictions, k: int = NUM_CLASSES) -> np.ndarray:
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
    if truth.shape != predictions.shape:
        raise ValueError(f"{len(truth)} labels but {len(predictions)} predictions")
    for arr in (truth, predictions):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"labels must lie in [0, {k})")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (truth, predictions), 1)
    return cm


def per_class_scores(cm: np.ndarray):
    """Precision, recall, F1 and support per class (0 where undefined)."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    predicted = cm.sum(axis=0)
    support = cm.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1, support.astype(np.int64)


def weighted_f1(cm: np.ndarray) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise ValueError("weighted F1 of an empty confusion matrix is undefined")
    _, _, f1, support = per_class_scores(cm)
    return float((f1 * support).sum() / total)


# --------------------------------------------------------------------------- evaluation

def _aggregate(logits, events, aggregation: str):
    ids = np.unique(events)
    preds = np.empty(len(ids), dtype=np.int64)
    for i, ev in enumerate(ids):
        block = logits[events == ev]
        if aggregation == "mean":
            preds[i] = int(block.mean(axis=0).argmax())
        elif aggregation == "vote":
            votes = np.bincount(block.argmax(axis=1), minlength=logits.shape[1])
            preds[i] = int(votes.argmax())
        else:
            raise ValueError(f"unknown aggregation {aggregation!r}")
    return ids, preds


def _report(cm: np.ndarray) -> dict:
    p, r, f, s = per_class_scores(cm)
    return {
        "confusion_matrix": cm.tolist(),
        "weighted_f1": weighted_f1(cm),
        "per_class": {SEIZURE_TYPES[c] if c < len(SEIZURE_TYPES) else str(c):
                      {"precision": float(p[c]), "recall": float(r[c]), "f1": float(f[c]), "support": int(s[c])}
                      for c in range(len(s)) if s[c] > 0 or cm[:, c].sum() > 0},
    }


def evaluate(model, subspaces, event_ids=None, aggregation: str = "mean", batch_size: int = 64) -> dict:
    """Window- and event-level metrics.

    ``subspaces`` is one subspace per ensemble member (or a single subspace for
    a plain model). Window logits are computed on the first subspace's windows
    (other members use the time-aligned window of the same event); event
    predictions take the argmax of the mean window logits (``aggregation="vote"``
    uses a majority vote instead).
    """
    if isinstance(subspaces, FeatureSubspace):
        subspaces = [subspaces]
    if event_ids is not None:
        subspaces = [s.for_events(event_ids) for s in subspaces]
    ref = subspaces[0]
    if len(ref) == 0:
        raise ValueError("empty test set")
    if isinstance(model, Ensemble):
        inputs = [s.x[align_windows(ref, s)] for s in subspaces]
    else:
        inputs = ref.x
    k = model.num_classes if isinstance(model, Ensemble) else model.cfg.num_classes
    logits = predict_logits(model, inputs, batch_size)
    window_cm = confusion_matrix(ref.labels, logits.argmax(axis=1), k)
    ids, preds = _aggregate(logits, ref.events, aggregation)
    truth = np.array([ref.labels[ref.events == ev][0] for ev in ids])
    event_cm = confusion_matrix(truth, preds, k)
    return {
        "window": _report(window_cm),
        "event": _report(event_cm),
        "aggregation": aggregation,
        "n_windows": int(len(ref)),
        "n_events": int(len(ids)),
        "event_predictions": {int(e): int(p) for e, p in zip(ids, preds)},
    }


def _mean(values) -> float:
    # shifted by the first value so identical scores average to themselves exactly
    ref = values[0]
    return ref + math.fsum(v - ref for v in values) / len(values)


def average_folds(fold_metrics: list[dict]) -> dict:
    if not fold_metrics:
        raise ValueError("no folds to average")
    return {level: _mean([float(m[level]["weighted_f1"]) for m in fold_metrics]) for level in ("window", "event")}
