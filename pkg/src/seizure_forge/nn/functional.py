"""Differentiable layer primitives on NCHW tensors."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _out_size(n: int, k: int, stride: int, padding: int) -> int:
    if n + 2 * padding < k:
        raise ValueError(f"window of size {k} does not fit input extent {n} with padding {padding}")
    return (n + 2 * padding - k) // stride + 1


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, Ho, Wo, kh, kw) strided view of a padded input."""
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


# --------------------------------------------------------------------------- convolution

def conv2d(x, weight, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (N, C, H, W) with ``weight`` (O, C, kh, kw)."""
    x, weight = as_tensor(x), as_tensor(weight)
    xd, wd = x.data, weight.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {xd.shape} and {wd.shape}")
    n, c, h, w = xd.shape
    o, cw, kh, kw = wd.shape
    if c != cw:
        raise ValueError(f"conv2d channel mismatch: input has {c}, weight expects {cw}")
    ho, wo = _out_size(h, kh, stride, padding), _out_size(w, kw, stride, padding)

    if kh == kw == 1 and padding == 0:
        xs = xd[:, :, ::stride, ::stride] if stride > 1 else xd
        w2 = wd.reshape(o, c)
        out = np.einsum("oc,nchw->nohw", w2, xs, optimize=True)

        def backward(g):
            dw = np.einsum("nohw,nchw->oc", g, xs, optimize=True).reshape(wd.shape)
            dxs = np.einsum("oc,nohw->nchw", w2, g, optimize=True)
            if stride > 1:
                dx = np.zeros_like(xd)
                dx[:, :, ::stride, ::stride] = dxs
            else:
                dx = dxs
            return dx, dw

        return Tensor._make(out, (x, weight), backward)

    xp = _pad(xd, padding)
    cols = _windows(xp, kh, kw, stride, ho, wo)
    out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def backward(g):
        dw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        dcols = np.tensordot(g, wd, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += (
                    dcols[..., i, j].transpose(0, 3, 1, 2)
                )
        dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        return dx, dw

    return Tensor._make(np.ascontiguousarray(out), (x, weight), backward)


def conv2d_direct(x, weight, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Loop-based reference convolution (values only) used to cross-check ``conv2d``."""
    xd = np.asarray(x.data if isinstance(x, Tensor) else x)
    wd = np.asarray(weight.data if isinstance(weight, Tensor) else weight)
    n, c, h, w = xd.shape
    o, cw, kh, kw = wd.shape
    if c != cw:
        raise ValueError(f"conv2d channel mismatch: input has {c}, weight expects {cw}")
    ho, wo = _out_size(h, kh, stride, padding), _out_size(w, kw, stride, padding)
    xp = _pad(xd, padding)
    out = np.zeros((n, o, ho, wo), dtype=np.result_type(xd, wd))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[b, oc, i, j] = np.sum(patch * wd[oc])
    return out


# --------------------------------------------------------------------------- normalization

def batch_norm2d(x, scale, shift, running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalization.

    In training mode the batch statistics are used and the running buffers are
    updated in place (unbiased variance, as is customary); in eval mode the
    running buffers are used.
    """
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    xd = x.data
    c = xd.shape[1]
    if scale.shape != (c,) or shift.shape != (c,) or running_mean.shape != (c,):
        raise ValueError(f"batch_norm2d parameters must have length {c}")
    gamma = scale.data.reshape(1, c, 1, 1)
    beta = shift.data.reshape(1, c, 1, 1)

    if training:
        m = xd.size // c
        mean = xd.mean(axis=(0, 2, 3), keepdims=True)
        centered = xd - mean
        var = (centered ** 2).mean(axis=(0, 2, 3), keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std
        running_mean *= 1 - momentum
        running_mean += momentum * mean.reshape(c)
        running_var *= 1 - momentum
        running_var += momentum * var.reshape(c) * (m / max(m - 1, 1))

        def backward(g):
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dbeta = g.sum(axis=(0, 2, 3))
            dxhat = g * gamma
            dx = inv_std / m * (
                m * dxhat
                - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
            return dx, dgamma, dbeta
    else:
        inv_std = (1.0 / np.sqrt(running_var + eps)).reshape(1, c, 1, 1).astype(xd.dtype)
        xhat = (xd - running_mean.reshape(1, c, 1, 1).astype(xd.dtype)) * inv_std

        def backward(g):
            return g * gamma * inv_std, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return Tensor._make(xhat * gamma + beta, (x, scale, shift), backward)


# --------------------------------------------------------------------------- activations

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,))


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit random generator")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,))


# --------------------------------------------------------------------------- pooling

def avg_pool2d(x, k: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Mean over ``k x k`` windows; zero padding counts towards the mean."""
    x = as_tensor(x)
    stride = k if stride is None else stride
    xd = x.data
    if xd.ndim != 4:
        raise ValueError(f"avg_pool2d expects a 4-D input, got shape {xd.shape}")
    n, c, h, w = xd.shape
    ho, wo = _out_size(h, k, stride, padding), _out_size(w, k, stride, padding)
    xp = _pad(xd, padding)
    out = _windows(xp, k, k, stride, ho, wo).mean(axis=(4, 5))

    def backward(g):
        dxp = np.zeros_like(xp)
        share = g / (k * k)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += share
        return (dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp,)

    return Tensor._make(out, (x,), backward)


def global_avg_pool2d(x) -> Tensor:
    x = as_tensor(x)
    n, c, h, w = x.shape
    return Tensor._make(
        x.data.mean(axis=(2, 3)), (x,),
        lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),),
    )


# --------------------------------------------------------------------------- structure

def concat_channels(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat_channels needs at least one input")
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ValueError(f"concat_channels shape mismatch: {t.shape} vs {ref}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])
    out = np.concatenate([t.data for t in tensors], axis=1)
    return Tensor._make(
        out, tuple(tensors),
        lambda g: tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors))),
    )


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` of shape (K, D)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is None:
        return Tensor._make(out, (x, weight), lambda g: (g @ wd, g.T @ xd))
    bias = as_tensor(bias)
    if bias.shape != (wd.shape[0],):
        raise ValueError(f"bias must have shape ({wd.shape[0]},), got {bias.shape}")
    return Tensor._make(out + bias.data, (x, weight, bias), lambda g: (g @ wd, g.T @ xd, g.sum(axis=0)))


# --------------------------------------------------------------------------- softmax family

def softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    out = log_softmax_np(x.data, axis)
    p = np.exp(out)
    return Tensor._make(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def softmax(x, axis: int = -1) -> Tensor:
    return log_softmax(x, axis).exp()


def _check_labels(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    return labels


def cross_entropy_np(logits: np.ndarray, labels) -> float:
    labels = _check_labels(labels, logits.shape[1])
    return float(-log_softmax_np(np.asarray(logits, dtype=np.float64), 1)[np.arange(len(labels)), labels].mean())


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(z)[y]`` (max-subtracted)."""
    logits = as_tensor(logits)
    n, k = logits.shape
    labels = _check_labels(labels, k)
    if len(labels) != n:
        raise ValueError(f"{n} logit rows but {len(labels)} labels")
    logp = log_softmax_np(logits.data, 1)
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[np.arange(n), labels] -= 1.0
        return (d * (g / n),)

    return Tensor._make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)
