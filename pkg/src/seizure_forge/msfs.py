"""Multi-spectral feature sampling: random (frequency, window, step) draws and the subspaces they produce."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .eeg_io import DatasetManifest, MontageSignal, load_event_montage, resample_signal
from .spectrogram import DEFAULT_OUT_SIZE, saliency_spectrogram

logger = logging.getLogger(__name__)

FREQUENCIES = (24, 48, 64, 96)
WINDOW_LENGTHS = (1.0,)
WINDOW_STEPS = (0.5, 1.0)

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 (Steele, Lea & Flood 2014); version 1 of the sampling stream.

    state += 0x9E3779B97F4A7C15
    z = (z ^ z >> 30) * 0xBF58476D1CE4E5B9
    z = (z ^ z >> 27) * 0x94D049BB133111EB
    return z ^ z >> 31
    """

    VERSION = 1
    GOLDEN = 0x9E3779B97F4A7C15

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + self.GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by the multiply-high method."""
        return (self.next_u64() * n) >> 64


@dataclass(frozen=True)
class SamplingParams:
    f: int
    w: float
    o: float
    seed: int = 0

    def __post_init__(self):
        if self.f <= 0 or self.w <= 0 or self.o <= 0:
            raise ValueError(f"sampling parameters must be positive, got {self}")

    @property
    def window_samples(self) -> int:
        return int(round(self.w * self.f))

    def as_tuple(self):
        return (self.f, self.w, self.o)


def draw_sampling_params(rng: SplitMix64, frequencies=FREQUENCIES, lengths=WINDOW_LENGTHS,
                         steps=WINDOW_STEPS) -> SamplingParams:
    """Independent uniform draws of f, w and o; advances ``rng`` by three outputs."""
    seed = rng.state
    f = frequencies[rng.below(len(frequencies))]
    w = lengths[rng.below(len(lengths))]
    o = steps[rng.below(len(steps))]
    return SamplingParams(int(f), float(w), float(o), seed)


def window_count(duration: float, w: float, o: float) -> int:
    if duration + 1e-9 < w:
        return 0
    return int(math.floor((duration - w) / o + 1e-9)) + 1


def window_segments(seg: MontageSignal, params: SamplingParams) -> list[np.ndarray]:
    """Resample to ``params.f`` and cut ``w``-second windows every ``o`` seconds."""
    count = window_count(seg.duration, params.w, params.o)
    if count == 0:
        logger.info("segment of %.3f s is shorter than the %.3f s window; dropped", seg.duration, params.w)
        return []
    x = resample_signal(seg, params.f).channels
    n = params.window_samples
    windows = []
    for j in range(count):
        start = int(round(j * params.o * params.f))
        if start + n > x.shape[1]:
            break
        windows.append(x[:, start:start + n])
    return windows


@dataclass
class FeatureSubspace:
    """Labeled saliency stacks generated with one set of sampling parameters.

    Records are kept as arrays: ``x`` (N, 3, H, W) float32, and per-record
    ``labels``, ``events`` (manifest row index) and ``starts`` (seconds into
    the event).
    """

    params: SamplingParams
    x: np.ndarray
    labels: np.ndarray
    events: np.ndarray
    starts: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, mask) -> "FeatureSubspace":
        mask = np.asarray(mask)
        return FeatureSubspace(self.params, self.x[mask], self.labels[mask], self.events[mask], self.starts[mask])

    def for_events(self, event_ids) -> "FeatureSubspace":
        return self.subset(np.isin(self.events, np.asarray(list(event_ids))))


def load_montages(manifest: DatasetManifest) -> list[MontageSignal]:
    cache: dict = {}
    return [load_event_montage(ev, cache) for ev in manifest.events]


def build_subspace(manifest: DatasetManifest, params: SamplingParams, out_size=DEFAULT_OUT_SIZE,
                   literal_s1: bool = False, montages=None, threads: int = 1) -> FeatureSubspace:
    """Window every event at ``params`` and compute its saliency stacks.

    An empty manifest yields an empty subspace; that condition is reported at
    training time.
    """
    h, w = out_size
    if len(manifest) == 0:
        return FeatureSubspace(params, np.zeros((0, 3, h, w), np.float32), np.zeros(0, np.int64),
                               np.zeros(0, np.int64), np.zeros(0, np.float64))
    if montages is None:
        montages = load_montages(manifest)

    def featurize(i):
        windows = window_segments(montages[i], params)
        return [saliency_spectrogram(win, params.f, out_size, literal_s1).stacked for win in windows]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_event = list(pool.map(featurize, range(len(manifest))))
    else:
        per_event = [featurize(i) for i in range(len(manifest))]

    dropped = sum(1 for stacks in per_event if not stacks)
    if dropped:
        logger.warning("%d event(s) shorter than one %.1f s window were dropped", dropped, params.w)

    xs, labels, events, starts = [], [], [], []
    for i, stacks in enumerate(per_event):
        label = manifest.events[i].label
        for j, stack in enumerate(stacks):
            xs.append(stack)
            labels.append(label)
            events.append(i)
            starts.append(j * params.o)
    x = np.stack(xs).astype(np.float32) if xs else np.zeros((0, 3, h, w), np.float32)
    return FeatureSubspace(params, x, np.array(labels, np.int64), np.array(events, np.int64), np.array(starts, np.float64))


def align_windows(reference: FeatureSubspace, other: FeatureSubspace) -> np.ndarray:
    """For each reference record, the index of the record in ``other`` from the
    same event whose start time is nearest."""
    out = np.empty(len(reference), dtype=np.int64)
    by_event: dict = {}
    for idx, ev in enumerate(other.events):
        by_event.setdefault(int(ev), []).append(idx)
    for i, (ev, t) in enumerate(zip(reference.events, reference.starts)):
        candidates = by_event.get(int(ev))
        if not candidates:
            raise ValueError(f"event {ev} has no windows in the {other.params.as_tuple()} subspace")
        cand = np.asarray(candidates)
        out[i] = cand[np.argmin(np.abs(other.starts[cand] - t))]
    return out
