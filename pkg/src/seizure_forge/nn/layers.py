"""Module containers holding parameters and buffers."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Tensor


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self, prefix: str = ""):
        yield prefix, self
        for name, child in self.children():
            yield from child.modules(f"{prefix}{name}.")

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def _own_buffers(self):
        return {}

    def named_buffers(self, prefix: str = ""):
        for name, value in self._own_buffers().items():
            yield prefix + name, value
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def train(self, mode: bool = True):
        for _, m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def set_rng(self, rng):
        for _, m in self.modules():
            if isinstance(m, Dropout):
                m.rng = rng
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict):
        targets = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(targets) | set(buffers)
        if set(state) != expected:
            missing, extra = expected - set(state), set(state) - expected
            raise KeyError(f"state mismatch; missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for name, value in state.items():
            dest = targets[name].data if name in targets else buffers[name]
            if dest.shape != value.shape:
                raise ValueError(f"{name}: shape {value.shape} does not match {dest.shape}")
            dest[...] = value
        return self

    def astype(self, dtype):
        """Cast parameters and buffers in place (e.g. float64 for gradient checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for _, m in self.modules():
            if isinstance(m, BatchNorm2d):
                m.running_mean = m.running_mean.astype(dtype)
                m.running_var = m.running_var.astype(dtype)
        return self


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int = 1, padding: int = 0,
                 bias: bool = False, dtype=np.float32):
        self.in_ch, self.out_ch, self.k, self.stride, self.padding = in_ch, out_ch, k, stride, padding
        self.weight = Tensor(np.zeros((out_ch, in_ch, k, k), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True) if bias else None
        self.out_shape = None

    def forward(self, x):
        y = F.conv2d(x, self.weight, self.stride, self.padding)
        if self.bias is not None:
            y = y + self.bias.reshape(1, -1, 1, 1)
        self.out_shape = y.shape
        return y

    def macs(self) -> int:
        if self.out_shape is None:
            return 0
        n, o, h, w = self.out_shape
        return o * h * w * self.in_ch * self.k * self.k


class BatchNorm2d(Module):
    def __init__(self, channels: int, dtype=np.float32):
        self.scale = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = F.BN_MOMENTUM
        self.batch_count = 0  # elements per channel in the last training batch

    def _own_buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x):
        if self.training:
            n, _, h, w = x.shape
            self.batch_count = n * h * w
        return F.batch_norm2d(x, self.scale, self.shift, self.running_mean, self.running_var, self.training,
                              momentum=self.momentum)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, dtype=np.float32):
        self.in_features, self.out_features = in_features, out_features
        self.weight = Tensor(np.zeros((out_features, in_features), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)

    def macs(self) -> int:
        return self.in_features * self.out_features


class ReLU(Module):
    def forward(self, x):
        return F.relu(x)


class Dropout(Module):
    def __init__(self, rate: float):
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = None

    def forward(self, x):
        return F.dropout(x, self.rate, self.training, self.rng)


class AvgPool2d(Module):
    def __init__(self, k: int, stride: int | None = None, padding: int = 0):
        self.k, self.stride, self.padding = k, k if stride is None else stride, padding

    def forward(self, x):
        return F.avg_pool2d(x, self.k, self.stride, self.padding)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x
