"""Desk-scale synthetic stand-in for a seizure corpus: EDF recordings plus a manifest.

Class ``j`` concentrates seizure power near ``4 + 3j`` Hz on every electrode
(random per-electrode amplitude and phase, so the bipolar montage keeps the
oscillation), buried in white noise at the requested SNR.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .eeg_io import SEIZURE_TYPES, DatasetManifest, SeizureEvent, TCP_ELECTRODES, write_manifest
from .seeding import stream

EXTRA_ELECTRODES = ("A1", "A2", "FZ", "PZ")


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 3
    n_patients: int = 6
    seizures_per_class: int = 10
    duration: float = 10.0
    snr_db: float = 20.0
    rate: int = 256
    gap: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_classes <= len(SEIZURE_TYPES):
            raise ValueError(f"n_classes must lie in [1, {len(SEIZURE_TYPES)}]")
        if self.n_patients < self.n_classes:
            raise ValueError("n_patients must be at least n_classes")
        if self.seizures_per_class < 1 or self.duration <= 0 or self.rate <= 0 or self.gap < 0:
            raise ValueError(f"invalid synthetic spec {self}")
        if self.duration != int(self.duration) or self.gap != int(self.gap):
            raise ValueError("duration and gap must be whole seconds (1 s EDF records)")


def class_frequency(label: int) -> float:
    return 4.0 + 3.0 * label


def write_edf(path, labels, samples: np.ndarray, rate: int, patient: str = "X", record_seconds: int = 1) -> None:
    """Minimal EDF writer: 16-bit samples, per-channel physical range from the data."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    ns, n = samples.shape
    spr = int(rate * record_seconds)
    if n % spr:
        raise ValueError("sample count must fill whole data records")
    n_records = n // spr
    dmin, dmax = -32768, 32767
    peak = np.maximum(np.abs(samples).max(axis=1), 1e-3)
    pmin, pmax = -peak, peak

    def fmt(value, width):
        text = str(value)
        if isinstance(value, float):
            for digits in range(6, -1, -1):
                text = f"{value:.{digits}f}"
                if len(text) <= width:
                    break
        if len(text) > width:
            raise ValueError(f"{value!r} does not fit an EDF field of width {width}")
        return text.ljust(width).encode("ascii")

    header = b"".join([
        fmt(0, 8), fmt(f"{patient} X X X", 80), fmt("Startdate 01-JAN-2020 X X X", 80),
        fmt("01.01.20", 8), fmt("00.00.00", 8), fmt(256 + 256 * ns, 8), fmt("", 44),
        fmt(n_records, 8), fmt(record_seconds, 8), fmt(ns, 4),
    ])
    fields = [
        [fmt(l, 16) for l in labels], [fmt("AgAgCl electrode", 80)] * ns, [fmt("uV", 8)] * ns,
        [fmt(float(v), 8) for v in pmin], [fmt(float(v), 8) for v in pmax],
        [fmt(dmin, 8)] * ns, [fmt(dmax, 8)] * ns, [fmt("HP:0.1Hz LP:70Hz", 80)] * ns,
        [fmt(spr, 8)] * ns, [fmt("", 32)] * ns,
    ]
    # physical range as written (rounded) defines the scaling
    pmin_w = np.array([float(f.decode()) for f in fields[3]])
    pmax_w = np.array([float(f.decode()) for f in fields[4]])
    gain = (pmax_w - pmin_w) / (dmax - dmin)
    digital = np.round((samples - pmin_w[:, None]) / gain[:, None] + dmin)
    digital = np.clip(digital, dmin, dmax).astype("<i2")
    body = digital.reshape(ns, n_records, spr).transpose(1, 0, 2).tobytes()
    Path(path).write_bytes(header + b"".join(b"".join(f) for f in fields) + body)


def _oscillation(rng, n: int, rate: int, freq: float, n_electrodes: int) -> np.ndarray:
    t = np.arange(n) / rate
    out = np.zeros((n_electrodes, n))
    for df in (-0.25, 0.25):
        amp = rng.uniform(0.5, 1.5, size=(n_electrodes, 1))
        phase = rng.uniform(0, 2 * np.pi, size=(n_electrodes, 1))
        out += amp * np.sin(2 * np.pi * (freq + df) * t + phase)
    return out


def generate_synthetic_dataset(out_dir, spec: SyntheticSpec = SyntheticSpec()) -> tuple[Path, DatasetManifest]:
    """Write one EDF per patient plus ``manifest.csv``; returns (manifest path, manifest).

    Seizure ``i`` of class ``c`` belongs to patient ``(c + i) mod n_patients``,
    so every class is spread over several patients.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = stream(spec.seed, "dataset")
    electrodes = TCP_ELECTRODES + EXTRA_ELECTRODES
    labels = [f"EEG {e}-REF" for e in electrodes]
    noise_std = 0.0 if math.isinf(spec.snr_db) else math.sqrt(1.0 / 10 ** (spec.snr_db / 10))
    signal_scale = 50.0  # microvolts

    per_patient: dict[int, list[int]] = {p: [] for p in range(spec.n_patients)}
    for c in range(spec.n_classes):
        for i in range(spec.seizures_per_class):
            per_patient[(c + i) % spec.n_patients].append(c)
    patient_shift = rng.uniform(-0.4, 0.4, size=spec.n_patients)

    events = []
    for p in range(spec.n_patients):
        pid = f"P{p:03d}"
        path = out_dir / f"{pid}.edf"
        seizure_n = int(spec.duration * spec.rate)
        gap_n = int(spec.gap * spec.rate)
        classes = per_patient[p]
        total = gap_n + len(classes) * (seizure_n + gap_n)
        # power of a two-tone oscillation with mean amplitude 1 is ~1
        x = rng.normal(0.0, noise_std, size=(len(electrodes), total)) if noise_std else np.zeros((len(electrodes), total))
        cursor = gap_n
        for c in classes:
            freq = class_frequency(c) + patient_shift[p] + rng.uniform(-0.2, 0.2)
            x[:, cursor:cursor + seizure_n] += _oscillation(rng, seizure_n, spec.rate, freq, len(electrodes))
            start = cursor / spec.rate
            events.append(SeizureEvent(pid, str(path), SEIZURE_TYPES[c], start, start + spec.duration))
            cursor += seizure_n + gap_n
        write_edf(path, labels, x * signal_scale, spec.rate, patient=pid)

    manifest_path = out_dir / "manifest.csv"
    write_manifest(manifest_path, events)
    return manifest_path, DatasetManifest("synthetic", events)
