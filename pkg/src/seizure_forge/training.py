"""Weight initialization, learning-rate schedule, joint ensemble training and distillation."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .models import Ensemble, predict_logits
from .msfs import FeatureSubspace, align_windows
from .nn import (
    BatchNorm2d, Conv2d, Dropout, Linear, Module, ParamStore, Tensor, adam_step, log_softmax, no_grad,
    softmax_cross_entropy, stack_mean,
)
from .nn.functional import cross_entropy_np, log_softmax_np, softmax_np
from .seeding import stream

logger = logging.getLogger(__name__)

KD_GRID = (0.0, 0.5, 1.0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    base_lr: float = 0.001
    decay: float = 0.0005
    batch_size: int = 50
    init_std: float = 0.01
    seed: int = 0
    milestones: tuple = (0.5, 0.75)
    lr_factor: float = 0.1
    joint: bool = True
    recalibrate_bn: bool = True

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not all(0 < m < 1 for m in self.milestones):
            raise ValueError("milestones are fractions in (0, 1)")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class KdConfig:
    alpha: float = 0.0
    beta: float = 0.5
    gamma: float = 1.0
    temperature: float = 2.0
    literal: bool = False

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) not in KD_GRID:
                raise ValueError(f"{name} must be one of {KD_GRID}, got {getattr(self, name)}")
        if self.alpha == self.beta == self.gamma == 0:
            raise ValueError("at least one of alpha, beta, gamma must be non-zero")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    def to_dict(self):
        return asdict(self)


def init_weights(model: Module, std: float = 0.01, seed: int = 0) -> Module:
    """Conv/linear weights ~ N(0, std^2), biases 0, batch-norm scale 1 and shift 0."""
    if std <= 0:
        raise ValueError("std must be positive")
    rng = stream(seed, "init")
    for _, mod in model.modules():
        if isinstance(mod, (Conv2d, Linear)):
            w = mod.weight.data
            w[...] = rng.normal(0.0, std, size=w.shape).astype(w.dtype)
            if mod.bias is not None:
                mod.bias.data[...] = 0
        elif isinstance(mod, BatchNorm2d):
            mod.scale.data[...] = 1
            mod.shift.data[...] = 0
            mod.running_mean[...] = 0
            mod.running_var[...] = 1
    return model


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    lr = cfg.base_lr
    for frac in sorted(cfg.milestones):
        if epoch >= int(round(frac * cfg.epochs)):
            lr *= cfg.lr_factor
    return lr


def recalibrate_batch_norm(model: Module, inputs: np.ndarray, batch_size: int = 64) -> Module:
    """Set every batch-norm buffer to the population statistics of ``inputs``
    under the current weights; dropout is off during the pass.

    With small initial weights the true activation variance is orders of
    magnitude below the buffer's starting value of 1, and a momentum-0.1
    average needs many steps to forget it. Short runs on small training sets
    end with buffers that are still mostly the initial value.
    """
    bns = [m for _, m in model.modules() if isinstance(m, BatchNorm2d)]
    if not bns or len(inputs) == 0:
        return model
    saved_momentum = [b.momentum for b in bns]
    count = [0] * len(bns)
    total = [np.zeros_like(b.running_mean, dtype=np.float64) for b in bns]
    total_sq = [np.zeros_like(b.running_mean, dtype=np.float64) for b in bns]
    model.train()
    for _, m in model.modules():
        if isinstance(m, Dropout):
            m.training = False
    for b in bns:
        b.momentum = 1.0
    with no_grad():
        for start in range(0, len(inputs), batch_size):
            model(inputs[start:start + batch_size])
            for i, b in enumerate(bns):
                m = b.batch_count
                mean = b.running_mean.astype(np.float64)
                # the buffer holds the unbiased batch variance
                second = b.running_var.astype(np.float64) * (m - 1) / m + mean ** 2
                count[i] += m
                total[i] += m * mean
                total_sq[i] += m * second
    for i, b in enumerate(bns):
        mean = total[i] / count[i]
        var = np.maximum(total_sq[i] / count[i] - mean ** 2, 0.0) * count[i] / max(count[i] - 1, 1)
        b.running_mean[...] = mean
        b.running_var[...] = var
        b.momentum = saved_momentum[i]
    model.eval()
    return model


def _check_subspaces(subspaces, num_classes: int):
    for i, sub in enumerate(subspaces):
        if len(sub) == 0:
            raise ValueError(f"subspace {i} is empty; nothing to train on")
        if sub.labels.min() < 0 or sub.labels.max() >= num_classes:
            raise ValueError(f"subspace {i} has labels outside [0, {num_classes})")


def _alignment(subspaces, reference: int = 0):
    ref = subspaces[reference]
    return [np.arange(len(ref)) if m == reference else align_windows(ref, s) for m, s in enumerate(subspaces)]


def train_ensemble(ensemble: Ensemble, subspaces: list[FeatureSubspace], cfg: TrainConfig, on_epoch=None) -> dict:
    """Train all members on the cross-entropy of their averaged logits.

    Batches are drawn over the windows of the first member's subspace; every
    other member receives the window of the same event nearest in time, so
    all members see the same labels each step. With ``cfg.joint`` false each
    member is instead trained on its own cross-entropy.
    """
    members = ensemble.members
    if len(subspaces) != len(members):
        raise ValueError(f"{len(members)} members but {len(subspaces)} subspaces")
    _check_subspaces(subspaces, ensemble.num_classes)
    align = _alignment(subspaces)
    labels = subspaces[0].labels

    batch_rng = stream(cfg.seed, "batches")
    dropout_rng = stream(cfg.seed, "dropout")
    for m in members:
        m.set_rng(dropout_rng).train()
    store = ParamStore.from_modules(*members)
    history = {"loss": [], "accuracy": [], "lr": []}

    n = len(labels)
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        order = batch_rng.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            y = labels[idx]
            outputs = [m(subspaces[k].x[align[k][idx]]) for k, m in enumerate(members)]
            combined = stack_mean(outputs)
            if cfg.joint:
                loss = softmax_cross_entropy(combined, y)
            else:
                loss = softmax_cross_entropy(outputs[0], y)
                for out in outputs[1:]:
                    loss = loss + softmax_cross_entropy(out, y)
            store.zero_grad()
            loss.backward()
            adam_step(store, store.grads(), lr, cfg.decay)
            total_loss += float(loss.data) * len(idx)
            correct += int((combined.data.argmax(axis=1) == y).sum())
        history["loss"].append(total_loss / n)
        history["accuracy"].append(correct / n)
        history["lr"].append(lr)
        logger.debug("epoch %d lr %.2g loss %.4f acc %.3f", epoch, lr, history["loss"][-1], history["accuracy"][-1])
        if on_epoch is not None:
            on_epoch(epoch, history)
    for k, m in enumerate(members):
        if cfg.recalibrate_bn:
            recalibrate_batch_norm(m, subspaces[k].x[align[k]], cfg.batch_size)
        m.eval()
    return history


# --------------------------------------------------------------------------- distillation

def kl_term(student_logits: Tensor, teacher_logits: np.ndarray, temperature: float, literal: bool = False) -> Tensor:
    n = student_logits.shape[0]
    if literal:
        # sigma(P_s) . (log sigma(P_s) - sigma(P_t) / T), summed over classes
        log_ps = log_softmax(student_logits, axis=1)
        ps = log_ps.exp()
        pt = softmax_np(np.asarray(teacher_logits, dtype=np.float64), 1).astype(student_logits.dtype)
        return (ps * (log_ps - pt / temperature)).sum() * (1.0 / n)
    t = temperature
    pt = softmax_np(np.asarray(teacher_logits, dtype=np.float64) / t, 1)
    log_pt = log_softmax_np(np.asarray(teacher_logits, dtype=np.float64) / t, 1)
    log_ps = log_softmax(student_logits * (1.0 / t), axis=1)
    const = float((pt * log_pt).sum())
    cross = (log_ps * pt.astype(student_logits.dtype)).sum()
    return (-cross + const) * (t * t / n)


def distillation_loss(student_logits, teacher_logits, labels, kd: KdConfig) -> Tensor:
    """``alpha*CE(P_t, y) + beta*CE(P_s, y) + gamma*KL``; the teacher term carries no gradient."""
    student_logits = student_logits if isinstance(student_logits, Tensor) else Tensor(student_logits)
    teacher_logits = np.asarray(teacher_logits.data if isinstance(teacher_logits, Tensor) else teacher_logits)
    if student_logits.shape != teacher_logits.shape:
        raise ValueError(f"student logits {student_logits.shape} and teacher logits {teacher_logits.shape} differ")
    if kd.temperature <= 0:
        raise ValueError("temperature must be positive")
    loss = None
    if kd.beta:
        loss = softmax_cross_entropy(student_logits, labels) * kd.beta
    if kd.gamma:
        term = kl_term(student_logits, teacher_logits, kd.temperature, kd.literal) * kd.gamma
        loss = term if loss is None else loss + term
    if kd.alpha:
        const = kd.alpha * cross_entropy_np(teacher_logits, labels)
        loss = Tensor(np.asarray(const, student_logits.dtype)) if loss is None else loss + const
    return loss


def teacher_logits_for(teacher: Ensemble, subspaces: list[FeatureSubspace], reference: FeatureSubspace,
                       batch_size: int = 64) -> np.ndarray:
    """Frozen teacher logits for every record of ``reference`` (aligned per member)."""
    inputs = [s.x[align_windows(reference, s)] for s in subspaces]
    return predict_logits(teacher, inputs, batch_size)


def train_student(student: Module, teacher: Ensemble | None, subspace: FeatureSubspace, cfg: TrainConfig,
                  kd: KdConfig, teacher_subspaces=None, teacher_logits=None, on_epoch=None) -> dict:
    """Distil a frozen teacher into ``student``.

    Teacher logits are computed once in eval mode for every student window
    (``teacher_subspaces`` supplies one aligned subspace per teacher member),
    or passed directly as ``teacher_logits``.
    """
    _check_subspaces([subspace], student.cfg.num_classes)
    if teacher_logits is None:
        if teacher is None or teacher_subspaces is None:
            raise ValueError("a teacher with its subspaces, or precomputed teacher_logits, is required")
        if teacher.num_classes != student.cfg.num_classes:
            raise ValueError(f"teacher has {teacher.num_classes} classes, student {student.cfg.num_classes}")
        teacher_logits = teacher_logits_for(teacher, teacher_subspaces, subspace)
    teacher_logits = np.asarray(teacher_logits, dtype=np.float32)
    if teacher_logits.shape != (len(subspace), student.cfg.num_classes):
        raise ValueError(f"teacher logits of shape {teacher_logits.shape} do not match the student subspace")

    batch_rng = stream(cfg.seed, "batches")
    student.set_rng(stream(cfg.seed, "dropout")).train()
    store = ParamStore.from_modules(student)
    history = {"loss": [], "accuracy": [], "lr": []}
    n = len(subspace)
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        order = batch_rng.permutation(n)
        total, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            y = subspace.labels[idx]
            logits = student(subspace.x[idx])
            loss = distillation_loss(logits, teacher_logits[idx], y, kd)
            store.zero_grad()
            loss.backward()
            adam_step(store, store.grads(), lr, cfg.decay)
            total += float(loss.data) * len(idx)
            correct += int((logits.data.argmax(axis=1) == y).sum())
        history["loss"].append(total / n)
        history["accuracy"].append(correct / n)
        history["lr"].append(lr)
        if on_epoch is not None:
            on_epoch(epoch, history)
    if cfg.recalibrate_bn:
        recalibrate_batch_norm(student, subspace.x, cfg.batch_size)
    student.eval()
    return history
