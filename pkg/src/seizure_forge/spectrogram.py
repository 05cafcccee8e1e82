"""Saliency-encoded spectrograms: the log-amplitude Fourier map and two saliency maps.

A window of the 20-channel montage becomes three ``p x 20`` maps

* ``ft``  -- per-channel log amplitude spectrum,
* ``s1``  -- spectral-residual saliency of the ``ft`` image,
* ``s2``  -- multi-scale center-surround saliency of the ``ft`` image,

which are min-max scaled to [0, 255], resized and stacked channel-first.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

LOG_EPS = 1e-8
GAUSS_SIGMA = 2.5
GAUSS_SIZE = 9
S2_RADII = (2, 3, 4)
DEFAULT_OUT_SIZE = (112, 112)


# --------------------------------------------------------------------------- FFT

def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    """Iterative decimation-in-time radix-2 FFT along the last axis."""
    n = x.shape[-1]
    lead = x.shape[:-1]
    x = x[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        x = x.reshape(lead + (n // size, size))
        even = x[..., :half]
        odd = x[..., half:] * twiddle
        x = np.concatenate([even + odd, even - odd], axis=-1)
        size *= 2
    return x.reshape(lead + (n,))


def _fft_bluestein(x: np.ndarray) -> np.ndarray:
    """Arbitrary-length DFT as a chirp convolution carried out with radix-2 FFTs."""
    n = x.shape[-1]
    m = 1 << (2 * n - 1).bit_length()
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp argument small for long inputs
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=complex)
    a[..., :n] = x * chirp
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:])[::-1]
    conv = _ifft_pow2(_fft_pow2(a) * _fft_pow2(b))
    return conv[..., :n] * chirp


def _ifft_pow2(x: np.ndarray) -> np.ndarray:
    return np.conj(_fft_pow2(np.conj(x))) / x.shape[-1]


def fft_1d(x, inverse: bool = False) -> np.ndarray:
    """Discrete Fourier transform along the last axis.

    Power-of-two lengths use a radix-2 transform; other lengths go through
    Bluestein's algorithm so the result is the exact length-``n`` DFT (no
    zero padding). The inverse carries the ``1/n`` factor.
    """
    x = np.asarray(x, dtype=complex)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("fft_1d needs a non-empty series")
    n = x.shape[-1]
    if inverse:
        x = np.conj(x)
    if n == 1:
        out = x.copy()
    elif n & (n - 1) == 0:
        out = _fft_pow2(x)
    else:
        out = _fft_bluestein(x)
    if inverse:
        out = np.conj(out) / n
    return out


def fft_2d(x, inverse: bool = False) -> np.ndarray:
    out = fft_1d(x, inverse=inverse)
    return np.swapaxes(fft_1d(np.swapaxes(out, -1, -2), inverse=inverse), -1, -2)


# --------------------------------------------------------------------------- maps

@dataclass
class FtMap:
    values: np.ndarray  # (p, 20)
    window_rate: float

    @property
    def shape(self):
        return self.values.shape


@dataclass
class SaliencySpectrogram:
    ft: FtMap
    s1: np.ndarray
    s2: np.ndarray
    stacked: np.ndarray  # (3, H, W) float32 in [0, 255]


def compute_ft_map(segment, window_rate: float = 0.0, n_channels: int = 20) -> FtMap:
    """Log amplitude of the per-channel FFT, laid out as ``p x channels``."""
    segment = np.asarray(segment, dtype=np.float64)
    if segment.ndim != 2 or segment.shape[0] != n_channels:
        raise ValueError(f"expected a ({n_channels}, p) window, got shape {segment.shape}")
    amplitude = np.abs(fft_1d(segment))
    return FtMap(np.log(amplitude + LOG_EPS).T.copy(), float(window_rate))


def gaussian_kernel(size: int = GAUSS_SIZE, sigma: float = GAUSS_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def spectral_residual(values: np.ndarray) -> np.ndarray:
    """Map minus its 3x3 local average (replicate edges)."""
    return values - ndimage.uniform_filter(values, size=3, mode="nearest")


def _values(ft) -> np.ndarray:
    return np.asarray(ft.values if isinstance(ft, FtMap) else ft, dtype=np.float64)


def compute_s1(ft, literal: bool = False) -> np.ndarray:
    """Spectral-residual saliency of the FT image.

    The default reconstructs ``|F^-1(exp(R + iP))|^2`` with ``R`` the residual
    of the map and ``P`` the phase of its 2-D transform, then smooths with a
    9x9 Gaussian. ``literal=True`` instead evaluates ``|F^-1(exp(R) + P)|^2``,
    i.e. the phase added outside the exponential.
    """
    values = _values(ft)
    residual = spectral_residual(values)
    spectrum = fft_2d(values)
    magnitude = np.abs(spectrum)
    phase = np.angle(spectrum)
    # phase of numerically-zero coefficients is noise
    phase[magnitude <= 1e-12 * max(magnitude.max(), 1e-300)] = 0.0
    if literal:
        recon = fft_2d(np.exp(residual) + phase, inverse=True)
    else:
        recon = fft_2d(np.exp(residual + 1j * phase), inverse=True)
    saliency = np.abs(recon) ** 2
    smoothed = ndimage.convolve(saliency, gaussian_kernel(), mode="nearest")
    return np.maximum(smoothed, 0.0)


def disk_footprint(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius ** 2


def compute_s2(ft, radii=S2_RADII) -> np.ndarray:
    """Sum over radii of (value - min over the clipped circular neighborhood)."""
    values = _values(ft)
    out = np.zeros_like(values)
    for rho in radii:
        low = ndimage.minimum_filter(values, footprint=disk_footprint(rho), mode="constant", cval=np.inf)
        out += values - low
    return out


def minmax_255(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return np.zeros_like(x)
    return (x - lo) * (255.0 / (hi - lo))


def resize_bilinear(img: np.ndarray, out_size) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping."""
    out_h, out_w = out_size
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must have positive area, got {out_size}")
    in_h, in_w = img.shape

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, wy = axis(in_h, out_h)
    x0, x1, wx = axis(in_w, out_w)
    top = img[y0][:, x0] + (img[y0][:, x1] - img[y0][:, x0]) * wx
    bottom = img[y1][:, x0] + (img[y1][:, x1] - img[y1][:, x0]) * wx
    return top + (bottom - top) * wy[:, None]


def assemble_stack(ft, s1, s2, out_size=DEFAULT_OUT_SIZE) -> SaliencySpectrogram:
    if out_size[0] < 1 or out_size[1] < 1:
        raise ValueError(f"output size must have positive area, got {out_size}")
    ft_map = ft if isinstance(ft, FtMap) else FtMap(np.asarray(ft, dtype=np.float64), 0.0)
    maps = [ft_map.values, np.asarray(s1), np.asarray(s2)]
    if len({m.shape for m in maps}) != 1:
        raise ValueError(f"maps must share dimensions, got {[m.shape for m in maps]}")
    stacked = np.stack([np.clip(resize_bilinear(minmax_255(m), out_size), 0.0, 255.0) for m in maps])
    return SaliencySpectrogram(ft_map, maps[1], maps[2], stacked.astype(np.float32))


def saliency_spectrogram(window, rate: float, out_size=DEFAULT_OUT_SIZE, literal_s1: bool = False) -> SaliencySpectrogram:
    """Full pipeline for one (20, p) window."""
    ft = compute_ft_map(window, rate)
    return assemble_stack(ft, compute_s1(ft, literal=literal_s1), compute_s2(ft), out_size)
