"""Densely connected sub-networks, the averaging ensemble, and the residual student."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .eeg_io import NUM_CLASSES
from .nn import (
    AvgPool2d, BatchNorm2d, Conv2d, Dropout, Linear, Module, ReLU, Sequential, Tensor,
    concat_channels, global_avg_pool2d, no_grad, relu, stack_mean,
)

INPUT_SCALE = 1.0 / 255.0


def _pool_out(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


@dataclass(frozen=True)
class DcnConfig:
    growth_rate: int = 12
    layers_per_block: tuple = (6, 12, 18, 12)
    compression: float = 0.5
    input_size: tuple = (112, 112)
    num_classes: int = NUM_CLASSES
    dropout_rate: float = 0.2
    bottleneck: int = 4
    transitions: bool = True
    stem_pool_stride: int = 1
    in_channels: int = 3

    def __post_init__(self):
        if len(self.layers_per_block) != 4:
            raise ValueError(f"a DCN has exactly 4 dense blocks, got {len(self.layers_per_block)}")
        if min(self.layers_per_block) < 1:
            raise ValueError("every dense block needs at least one layer")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if not 0 < self.compression <= 1:
            raise ValueError("compression must lie in (0, 1]")

    def final_spatial(self) -> tuple:
        h, w = self.input_size
        h, w = _pool_out(h, 7, 2, 3), _pool_out(w, 7, 2, 3)
        h, w = _pool_out(h, 3, self.stem_pool_stride, 1), _pool_out(w, 3, self.stem_pool_stride, 1)
        if self.transitions:
            for _ in range(3):
                h, w = h // 2, w // 2
        return h, w


@dataclass(frozen=True)
class EnsembleConfig:
    members: tuple = field(default_factory=lambda: (
        DcnConfig(layers_per_block=(6, 12, 18, 12)),
        DcnConfig(layers_per_block=(6, 12, 24, 16)),
        DcnConfig(layers_per_block=(6, 12, 30, 20)),
    ))

    def __post_init__(self):
        if len(self.members) != 3:
            raise ValueError(f"the ensemble has 3 members, got {len(self.members)}")
        for i in range(3):
            for j in range(i + 1, 3):
                a, b = self.members[i].layers_per_block, self.members[j].layers_per_block
                if a[2:] == b[2:]:
                    raise ValueError(f"members {i} and {j} must differ in dense blocks 3 or 4")
        if len({(m.num_classes, tuple(m.input_size)) for m in self.members}) != 1:
            raise ValueError("members must share input size and class count")

    @classmethod
    def small(cls, input_size=(32, 32), growth_rate: int = 4, dropout_rate: float = 0.1,
              num_classes: int = NUM_CLASSES) -> "EnsembleConfig":
        """Desk-scale ensemble used by the synthetic experiments."""
        base = DcnConfig(growth_rate=growth_rate, input_size=tuple(input_size), dropout_rate=dropout_rate,
                         bottleneck=2, num_classes=num_classes)
        return cls(tuple(replace(base, layers_per_block=lpb) for lpb in ((1, 1, 1, 1), (1, 1, 2, 2), (1, 1, 3, 3))))


@dataclass(frozen=True)
class StudentConfig:
    widths: tuple = (16, 32, 64)
    strides: tuple = (1, 2, 2)
    stem_width: int = 16
    stem_stride: int = 2
    input_size: tuple = (112, 112)
    num_classes: int = NUM_CLASSES
    in_channels: int = 3

    def __post_init__(self):
        if len(self.widths) != 3 or len(self.strides) != 3:
            raise ValueError("the student has exactly 3 residual layers")


# --------------------------------------------------------------------------- DCN

class DenseLayer(Module):
    def __init__(self, in_ch: int, growth: int, bottleneck: int, dropout_rate: float):
        mid = bottleneck * growth
        self.body = Sequential(
            Conv2d(in_ch, mid, 1), BatchNorm2d(mid), ReLU(),
            Conv2d(mid, growth, 3, padding=1), BatchNorm2d(growth), ReLU(),
            Dropout(dropout_rate),
        )

    def forward(self, x):
        return self.body(x)


class DenseBlock(Module):
    """Layer ``l`` sees the channel concatenation of the block input and all earlier outputs."""

    def __init__(self, in_ch: int, n_layers: int, growth: int, bottleneck: int, dropout_rate: float):
        self.layers = [DenseLayer(in_ch + l * growth, growth, bottleneck, dropout_rate) for l in range(n_layers)]
        self.out_channels = in_ch + n_layers * growth

    def forward(self, x):
        features = [x]
        for layer in self.layers:
            features.append(layer(concat_channels(features)))
        return concat_channels(features)


class Transition(Module):
    def __init__(self, in_ch: int, out_ch: int, downsample: bool = True):
        self.body = Sequential(Conv2d(in_ch, out_ch, 1), BatchNorm2d(out_ch), ReLU())
        self.pool = AvgPool2d(2, 2) if downsample else None

    def forward(self, x):
        x = self.body(x)
        return self.pool(x) if self.pool is not None else x


class DCN(Module):
    def __init__(self, cfg: DcnConfig):
        h, w = cfg.final_spatial()
        if h < 1 or w < 1:
            raise ValueError(f"input size {cfg.input_size} reduces below 1x1 before the last dense block")
        self.cfg = cfg
        g = cfg.growth_rate
        ch = 2 * g
        self.stem = Sequential(
            Conv2d(cfg.in_channels, ch, 7, stride=2, padding=3), BatchNorm2d(ch), ReLU(),
            AvgPool2d(3, cfg.stem_pool_stride, padding=1),
        )
        self.blocks, self.transitions = [], []
        for b, n_layers in enumerate(cfg.layers_per_block):
            block = DenseBlock(ch, n_layers, g, cfg.bottleneck, cfg.dropout_rate)
            self.blocks.append(block)
            ch = block.out_channels
            if b < 3:
                out = max(1, int(ch * cfg.compression)) if cfg.transitions else ch
                self.transitions.append(Transition(ch, out, downsample=cfg.transitions) if cfg.transitions else Sequential())
                ch = out
        self.feature_channels = ch
        self.fc = Linear(ch, cfg.num_classes)

    def features(self, x):
        x = self.stem(_prepare(x, self.cfg.in_channels, self.cfg.input_size))
        for b, block in enumerate(self.blocks):
            x = block(x)
            if b < 3:
                x = self.transitions[b](x)
        return x

    def forward(self, x):
        return self.fc(global_avg_pool2d(self.features(x)))


def _prepare(x, channels: int, size) -> Tensor:
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if data.ndim != 4 or data.shape[1] != channels or tuple(data.shape[2:]) != tuple(size):
        raise ValueError(f"expected input of shape (N, {channels}, {size[0]}, {size[1]}), got {data.shape}")
    if isinstance(x, Tensor) and x.requires_grad:
        return x * INPUT_SCALE
    if not np.issubdtype(data.dtype, np.floating):
        data = data.astype(np.float32)
    return Tensor(data * np.asarray(INPUT_SCALE, dtype=data.dtype))


def build_dcn(cfg: DcnConfig) -> DCN:
    return DCN(cfg)


def dcn_forward(model: Module, batch, training: bool = False) -> Tensor:
    model.train(training)
    return model(batch)


class Ensemble(Module):
    def __init__(self, members):
        self.members = list(members)
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        classes = {m.cfg.num_classes for m in self.members}
        if len(classes) != 1:
            raise ValueError(f"members disagree on the class count: {sorted(classes)}")
        self.num_classes = classes.pop()

    @classmethod
    def build(cls, cfg: EnsembleConfig) -> "Ensemble":
        return cls(build_dcn(c) for c in cfg.members)

    def forward(self, batches):
        return ensemble_forward(self.members, batches)


def ensemble_forward(members, batches) -> Tensor:
    """Mean of the member logits; ``batches`` is one array shared by all members
    or one array per member."""
    members = list(members)
    if not isinstance(batches, (list, tuple)):
        batches = [batches] * len(members)
    if len(batches) != len(members):
        raise ValueError(f"{len(members)} members but {len(batches)} input batches")
    logits = [m(b) for m, b in zip(members, batches)]
    ks = {l.shape[1] for l in logits}
    if len(ks) != 1:
        raise ValueError(f"members disagree on the class count: {sorted(ks)}")
    return stack_mean(logits)


# --------------------------------------------------------------------------- student

class ResidualLayer(Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int):
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, 3, padding=1)
        self.bn2 = BatchNorm2d(out_ch)
        self.project = None
        if stride != 1 or in_ch != out_ch:
            self.project = Sequential(Conv2d(in_ch, out_ch, 1, stride=stride), BatchNorm2d(out_ch))

    def forward(self, x):
        y = relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        skip = self.project(x) if self.project is not None else x
        return relu(y + skip)


class Student(Module):
    def __init__(self, cfg: StudentConfig):
        self.cfg = cfg
        self.stem = Sequential(
            Conv2d(cfg.in_channels, cfg.stem_width, 3, stride=cfg.stem_stride, padding=1),
            BatchNorm2d(cfg.stem_width), ReLU(),
        )
        ch = cfg.stem_width
        self.layers = []
        for width, stride in zip(cfg.widths, cfg.strides):
            self.layers.append(ResidualLayer(ch, width, stride))
            ch = width
        self.fc = Linear(ch, cfg.num_classes)

    def forward(self, x):
        x = self.stem(_prepare(x, self.cfg.in_channels, self.cfg.input_size))
        for layer in self.layers:
            x = layer(x)
        return self.fc(global_avg_pool2d(x))


def build_student(cfg: StudentConfig) -> Student:
    h, w = cfg.input_size
    for s in (cfg.stem_stride,) + tuple(cfg.strides):
        h, w = _pool_out(h, 3, s, 1), _pool_out(w, 3, s, 1)
    if h < 1 or w < 1:
        raise ValueError(f"input size {cfg.input_size} is too small for the student")
    return Student(cfg)


# --------------------------------------------------------------------------- accounting

@dataclass
class Profile:
    rows: list  # (name, kind, output shape, params, MACs)
    params: int
    macs: int
    latency_ms: float = float("nan")

    def table(self) -> str:
        lines = [f"{'layer':<44}{'kind':<12}{'output':<20}{'params':>10}{'MACs':>14}"]
        for name, kind, shape, params, macs in self.rows:
            lines.append(f"{name:<44}{kind:<12}{str(shape):<20}{params:>10}{macs:>14}")
        lines.append(f"total parameters: {self.params} ({self.params / 1e6:.4f} M)")
        lines.append(f"total FLOPs (multiply-accumulates): {self.macs} ({self.macs / 1e6:.2f} M)")
        if not np.isnan(self.latency_ms):
            lines.append(f"forward latency (batch 1): {self.latency_ms:.2f} ms")
        return "\n".join(lines)


def profile(model: Module, timed: bool = False) -> Profile:
    """Shape inference, parameter and FLOP accounting by one batch-1 eval forward."""
    import time

    members = model.members if isinstance(model, Ensemble) else [model]
    was_training = [m.training for m in members]
    rows, macs = [], 0
    elapsed = 0.0
    for idx, member in enumerate(members):
        cfg = member.cfg
        x = np.zeros((1, cfg.in_channels) + tuple(cfg.input_size), dtype=np.float32)
        member.eval()
        with no_grad():
            t0 = time.perf_counter()
            member(x)
            elapsed += time.perf_counter() - t0
        prefix = f"member{idx}." if len(members) > 1 else ""
        for name, mod in member.modules():
            if isinstance(mod, (Conv2d, Linear)):
                shape = mod.out_shape[1:] if isinstance(mod, Conv2d) else (mod.out_features,)
                n_params = sum(p.data.size for _, p in mod.named_parameters())
                rows.append((prefix + name.rstrip("."), type(mod).__name__, tuple(shape), n_params, mod.macs()))
                macs += mod.macs()
            elif isinstance(mod, BatchNorm2d):
                rows.append((prefix + name.rstrip("."), "BatchNorm2d", "", mod.scale.data.size * 2, 0))
    for m, mode in zip(members, was_training):
        m.train(mode)
    params = int(sum(m.num_parameters() for m in members))
    return Profile(rows, params, macs, elapsed * 1e3 if timed else float("nan"))


def predict_logits(model: Module, inputs, batch_size: int = 64) -> np.ndarray:
    """Eval-mode logits. For an :class:`Ensemble`, ``inputs`` holds one aligned
    array per member; otherwise a single (N, C, H, W) array."""
    if isinstance(model, Ensemble):
        arrays = list(inputs)
        members = model.members
    else:
        arrays, members = [inputs], [model]
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise ValueError("member inputs must be aligned (equal lengths)")
    was = [m.training for m in members]
    for m in members:
        m.eval()
    out = []
    with no_grad():
        for i in range(0, n, batch_size):
            out.append(ensemble_forward(members, [a[i:i + batch_size] for a in arrays]).data)
    for m, mode in zip(members, was):
        m.train(mode)
    if not out:
        return np.zeros((0, members[0].cfg.num_classes), dtype=np.float32)
    return np.concatenate(out)
