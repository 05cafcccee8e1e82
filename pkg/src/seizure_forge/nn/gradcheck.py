from __future__ import annotations

import numpy as np

from .tensor import Tensor


def finite_diff_gradcheck(op, inputs, h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between autodiff and central-difference gradients.

    ``op`` maps the input Tensors to an output Tensor; non-scalar outputs are
    reduced by a fixed random projection. The error for each input is
    ``||g_auto - g_fd|| / max(||g_auto||, ||g_fd||)`` (0 when both vanish).
    """
    inputs = [x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64)) for x in inputs]
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    out = op(*inputs)
    proj = np.random.default_rng([seed, 0x6772]).normal(size=out.shape) if out.data.size > 1 else None

    def scalar(o):
        return float((o.data * proj).sum()) if proj is not None else float(o.data)

    out.backward(proj if proj is not None else None)
    worst = 0.0
    for x in inputs:
        auto = np.zeros_like(x.data) if x.grad is None else x.grad
        numeric = np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = scalar(op(*inputs))
            flat[i] = orig - h
            down = scalar(op(*inputs))
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        scale = max(np.linalg.norm(auto), np.linalg.norm(numeric))
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(auto - numeric) / scale))
    return worst
