"""EEG ingestion: EDF parsing, TCP bipolar montage, resampling and seizure manifests."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

# Index in this tuple is the class id used everywhere downstream.
SEIZURE_TYPES = ("FN", "GN", "SP", "CP", "AB", "TN", "TC")
EXCLUDED_TYPES = ("MC",)
NUM_CLASSES = len(SEIZURE_TYPES)

TCP_PAIRS = (
    ("FP1", "F7"), ("F7", "T3"), ("T3", "T5"), ("T5", "O1"),
    ("FP2", "F8"), ("F8", "T4"), ("T4", "T6"), ("T6", "O2"),
    ("T3", "C3"), ("C3", "CZ"), ("CZ", "C4"), ("C4", "T4"),
    ("FP1", "F3"), ("F3", "C3"), ("C3", "P3"), ("P3", "O1"),
    ("FP2", "F4"), ("F4", "C4"), ("C4", "P4"), ("P4", "O2"),
)
TCP_CHANNELS = tuple(f"{a}-{b}" for a, b in TCP_PAIRS)
TCP_ELECTRODES = tuple(sorted({e for pair in TCP_PAIRS for e in pair}))

MANIFEST_COLUMNS = ("patient_id", "recording_path", "seizure_type", "start", "stop", "version")


class EdfError(ValueError):
    """Malformed EDF content; ``offset`` is the byte position of the offending field."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class MontageError(KeyError):
    pass


class ManifestError(ValueError):
    pass


@dataclass
class Recording:
    patient_id: str
    recording_id: str
    native_rate: float
    electrode_labels: list[str]
    samples: np.ndarray  # (channels, n) in microvolts

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.native_rate <= 0:
            raise ValueError(f"native_rate must be positive, got {self.native_rate}")
        if len(self.electrode_labels) != self.samples.shape[0]:
            raise ValueError("one label per channel row is required")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.native_rate


@dataclass
class MontageSignal:
    channels: np.ndarray  # (20, n), rows in TCP_CHANNELS order
    rate: float
    labels: tuple[str, ...] = TCP_CHANNELS

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 2 or self.channels.shape[0] != len(TCP_CHANNELS):
            raise ValueError(f"montage signal needs exactly 20 rows, got shape {self.channels.shape}")

    @property
    def duration(self) -> float:
        return self.channels.shape[1] / self.rate


@dataclass(frozen=True)
class SeizureEvent:
    patient_id: str
    recording_path: str
    seizure_type: str
    start: float
    stop: float

    def __post_init__(self):
        if self.seizure_type not in SEIZURE_TYPES:
            raise ManifestError(f"seizure type {self.seizure_type!r} is not one of {SEIZURE_TYPES}")
        if not 0 <= self.start < self.stop:
            raise ManifestError(f"event interval must satisfy 0 <= start < stop, got [{self.start}, {self.stop})")

    @property
    def label(self) -> int:
        return SEIZURE_TYPES.index(self.seizure_type)

    @property
    def duration(self) -> float:
        return self.stop - self.start


@dataclass
class DatasetManifest:
    version_tag: str
    events: list[SeizureEvent] = field(default_factory=list)
    excluded: int = 0

    def __len__(self):
        return len(self.events)

    @property
    def labels(self) -> np.ndarray:
        return np.array([ev.label for ev in self.events], dtype=np.int64)

    @property
    def patients(self) -> list[str]:
        return [ev.patient_id for ev in self.events]


# --------------------------------------------------------------------------- EDF

def _field(raw: bytes, offset: int, width: int) -> str:
    chunk = raw[offset:offset + width]
    if len(chunk) < width:
        raise EdfError("truncated header", offset)
    return chunk.decode("ascii", errors="replace").strip()


def _number(raw: bytes, offset: int, width: int, kind=float):
    text = _field(raw, offset, width)
    try:
        return kind(text)
    except ValueError:
        try:
            # some writers emit "256.0" in integer slots
            value = float(text)
        except ValueError:
            raise EdfError(f"non-numeric header field {text!r}", offset) from None
        if kind is int and value != int(value):
            raise EdfError(f"non-integer header field {text!r}", offset) from None
        return kind(value)


def read_edf(path) -> Recording:
    """Read every signal of an EDF file as microvolt series.

    Signals at a sampling rate different from the majority rate (and the
    ``EDF Annotations`` channel) are skipped with a log message so that the
    returned recording is rectangular.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 256:
        raise EdfError("truncated header", len(raw))

    patient = _field(raw, 8, 80)
    n_records = _number(raw, 236, 8, int)
    record_duration = _number(raw, 244, 8, float)
    ns = _number(raw, 252, 4, int)
    if ns < 1:
        raise EdfError(f"signal count must be positive, got {ns}", 252)
    if record_duration <= 0:
        raise EdfError(f"record duration must be positive, got {record_duration}", 244)

    header_end = 256 + 256 * ns
    if len(raw) < header_end:
        raise EdfError("truncated header", len(raw))

    # signal header fields are stored field-major: all labels, then all transducers, ...
    widths = [("label", 16), ("transducer", 80), ("unit", 8), ("pmin", 8), ("pmax", 8),
              ("dmin", 8), ("dmax", 8), ("prefilter", 80), ("spr", 8), ("reserved", 32)]
    sig = {}
    offset = 256
    for name, width in widths:
        values = []
        for i in range(ns):
            at = offset + i * width
            if name in ("pmin", "pmax", "dmin", "dmax"):
                values.append((_number(raw, at, width, float), at))
            elif name == "spr":
                values.append((_number(raw, at, width, int), at))
            else:
                values.append((_field(raw, at, width), at))
        sig[name] = values
        offset += ns * width

    spr = np.array([v for v, _ in sig["spr"]], dtype=np.int64)
    record_size = int(spr.sum())
    available = (len(raw) - header_end) // (2 * record_size) if record_size else 0
    if n_records < 0:
        n_records = available
    elif n_records > available:
        raise EdfError(f"header announces {n_records} records but only {available} are present", 236)

    data = np.frombuffer(raw, dtype="<i2", count=n_records * record_size, offset=header_end)
    data = data.reshape(n_records, record_size)
    bounds = np.concatenate([[0], np.cumsum(spr)])

    labels = [v for v, _ in sig["label"]]
    keep = [i for i in range(ns) if "ANNOTATION" not in labels[i].upper()]
    if not keep:
        raise EdfError("file contains no signal channels", 256)
    counts = {}
    for i in keep:
        counts[int(spr[i])] = counts.get(int(spr[i]), 0) + 1
    target_spr = max(counts, key=lambda k: (counts[k], k))
    dropped = [labels[i] for i in keep if spr[i] != target_spr]
    if dropped:
        logger.info("%s: skipping %d channel(s) at a non-majority rate: %s", path.name, len(dropped), dropped)
    keep = [i for i in keep if spr[i] == target_spr]

    rows = []
    for i in keep:
        (pmin, _), (pmax, _) = sig["pmin"][i], sig["pmax"][i]
        (dmin, at), (dmax, _) = sig["dmin"][i], sig["dmax"][i]
        if dmax == dmin:
            raise EdfError(f"digital range of zero width for signal {labels[i]!r}", at)
        gain = (pmax - pmin) / (dmax - dmin)
        digital = data[:, bounds[i]:bounds[i + 1]].reshape(-1).astype(np.float64)
        physical = (digital - dmin) * gain + pmin
        unit = sig["unit"][i][0].lower()
        if unit in ("mv",):
            physical *= 1e3
        elif unit in ("v",):
            physical *= 1e6
        rows.append(physical)

    return Recording(
        patient_id=patient.split(" ")[0] if patient else path.stem,
        recording_id=path.stem,
        native_rate=target_spr / record_duration,
        electrode_labels=[labels[i] for i in keep],
        samples=np.vstack(rows),
    )


# --------------------------------------------------------------------------- montage

def normalize_electrode(label: str) -> str:
    """Canonical electrode name: upper case, no ``EEG`` prefix, no ``-REF``/``-LE`` suffix."""
    name = label.strip().upper()
    if name.startswith("EEG "):
        name = name[4:].strip()
    for suffix in ("-REF", "-LE"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return name.strip()


def apply_tcp_montage(rec: Recording) -> MontageSignal:
    index = {}
    for row, label in enumerate(rec.electrode_labels):
        index.setdefault(normalize_electrode(label), row)
    missing = [e for e in TCP_ELECTRODES if e not in index]
    if missing:
        blocked = [f"{a}-{b}" for a, b in TCP_PAIRS if a in missing or b in missing]
        raise MontageError(
            f"recording {rec.recording_id!r} is missing electrode(s) {', '.join(missing)}; "
            f"blocked pairs: {', '.join(blocked)}"
        )
    a = [index[x] for x, _ in TCP_PAIRS]
    b = [index[y] for _, y in TCP_PAIRS]
    return MontageSignal(rec.samples[a] - rec.samples[b], rec.native_rate)


def resample_signal(sig: MontageSignal, target_rate: float) -> MontageSignal:
    """Linear interpolation onto a ``target_rate`` grid; no anti-alias filtering."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == sig.rate:
        return MontageSignal(sig.channels.copy(), sig.rate)
    return MontageSignal(_interp_rows(sig.channels, sig.rate, target_rate), float(target_rate))


def _interp_rows(rows: np.ndarray, rate: float, target_rate: float) -> np.ndarray:
    n = rows.shape[1]
    n_out = int(round(n / rate * target_rate))
    t_in = np.arange(n) / rate
    t_out = np.arange(n_out) / target_rate
    return np.vstack([np.interp(t_out, t_in, row) for row in rows]) if n_out else np.zeros((rows.shape[0], 0))


def extract_event_segment(rec: Recording, ev: SeizureEvent) -> Recording:
    # small tolerance for events annotated at the exact end of a recording
    if ev.stop > rec.duration + 1e-9:
        raise ValueError(
            f"event [{ev.start}, {ev.stop}) extends past the end of recording "
            f"{rec.recording_id!r} ({rec.duration:.3f} s)"
        )
    i0 = int(round(ev.start * rec.native_rate))
    i1 = min(int(round(ev.stop * rec.native_rate)), rec.n_samples)
    return Recording(
        patient_id=rec.patient_id,
        recording_id=f"{rec.recording_id}[{ev.start:g}:{ev.stop:g}]",
        native_rate=rec.native_rate,
        electrode_labels=list(rec.electrode_labels),
        samples=rec.samples[:, i0:i1].copy(),
    )


# --------------------------------------------------------------------------- manifest

def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Parse a seizure manifest CSV.

    Relative ``recording_path`` entries are resolved against the manifest's
    directory. Myoclonic (MC) rows are dropped and counted in ``excluded``.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc

    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames is None:
        return DatasetManifest(version_tag="", events=[])
    missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise ManifestError(f"manifest {path} lacks column(s): {', '.join(missing)}")

    events, versions, excluded = [], set(), 0
    for lineno, row in enumerate(reader, start=2):
        kind = row["seizure_type"].strip().upper()
        if kind in EXCLUDED_TYPES:
            excluded += 1
            logger.warning("%s:%d: excluding %s seizure (too few events for analysis)", path.name, lineno, kind)
            continue
        if kind not in SEIZURE_TYPES:
            raise ManifestError(f"{path.name}:{lineno}: unknown seizure label {kind!r}")
        try:
            start, stop = float(row["start"]), float(row["stop"])
        except ValueError:
            raise ManifestError(f"{path.name}:{lineno}: non-numeric start/stop") from None
        if start >= stop:
            raise ManifestError(f"{path.name}:{lineno}: start {start} is not before stop {stop}")
        rec_path = Path(row["recording_path"].strip())
        if not rec_path.is_absolute():
            rec_path = path.parent / rec_path
        if check_files and not rec_path.is_file():
            raise ManifestError(f"{path.name}:{lineno}: recording {rec_path} is not readable")
        events.append(SeizureEvent(row["patient_id"].strip(), str(rec_path), kind, start, stop))
        versions.add(row["version"].strip())

    if excluded:
        logger.warning("%s: %d MC row(s) excluded", path.name, excluded)
    return DatasetManifest(version_tag=",".join(sorted(versions)), events=events, excluded=excluded)


def write_manifest(path, events, version: str = "synthetic") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for ev in events:
            rec = Path(ev.recording_path)
            try:
                rec = rec.relative_to(path.parent)
            except ValueError:
                pass
            writer.writerow([ev.patient_id, rec.as_posix(), ev.seizure_type, f"{ev.start:g}", f"{ev.stop:g}", version])


def load_event_montage(ev: SeizureEvent, cache: dict | None = None) -> MontageSignal:
    """Read the recording an event points at and return its montage slice."""
    if cache is not None and ev.recording_path in cache:
        rec = cache[ev.recording_path]
    else:
        rec = read_edf(ev.recording_path)
        if cache is not None:
            cache[ev.recording_path] = rec
    return apply_tcp_montage(extract_event_segment(rec, ev))
