"""ADAM with coupled L2 decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class ParamStore:
    params: dict[str, Tensor]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p.data))
            self.v.setdefault(name, np.zeros_like(p.data))

    @classmethod
    def from_modules(cls, *modules, prefixes=None):
        params = {}
        for i, module in enumerate(modules):
            prefix = prefixes[i] if prefixes else (f"m{i}." if len(modules) > 1 else "")
            params.update({prefix + name: p for name, p in module.named_parameters()})
        return cls(params)

    def grads(self) -> dict[str, np.ndarray]:
        return {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def adam_step(store: ParamStore, grads: dict, lr: float, decay: float = 0.0,
              beta1: float = BETA1, beta2: float = BETA2, eps: float = ADAM_EPS) -> ParamStore:
    """One bias-corrected ADAM update, applied in place to ``store.params``.

    ``decay`` is added to the gradient as ``decay * theta`` for every
    parameter, weights and biases alike.
    """
    for name, p in store.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} does not match parameter {p.data.shape}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if decay:
            g = g + decay * p.data
        m, v = store.m[name], store.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)
    return store
