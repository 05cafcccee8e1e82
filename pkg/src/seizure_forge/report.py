"""Run manifests, metrics JSON and plain-text reports.

Everything written here is a pure function of its inputs (sorted keys, no
timestamps), so repeated runs with the same configuration produce identical
bytes.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

from .eeg_io import SEIZURE_TYPES

RUN_MANIFEST = "run.json"
METRICS_JSON = "metrics.json"
REPORT_TXT = "report.txt"


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fmt_score(value: float) -> str:
    # repr round-trips, so the text and the JSON agree exactly
    return repr(float(value))


def render_report(manifest: dict, metrics: dict) -> str:
    lines = [f"seizure-forge {manifest['subcommand']} report", ""]
    lines.append("configuration:")
    for key, value in sorted(manifest["config"].items()):
        lines.append(f"  {key}: {json.dumps(value, sort_keys=True)}")
    if manifest.get("sampling"):
        lines += ["", "sampling parameters (f Hz, w s, o s):"]
        for i, (f, w, o) in enumerate(manifest["sampling"]):
            lines.append(f"  member {i}: {f}, {w}, {o}")
    if manifest.get("folds"):
        fs = manifest["folds"]
        lines += ["", f"folds: {fs['mode']}-wise, k={fs['k']}, seed={fs['seed']}, digest {fs['digest']}"]
    if manifest.get("checkpoints"):
        lines += ["", "checkpoints:"] + [f"  {c}" for c in manifest["checkpoints"]]
    if metrics.get("folds"):
        lines += ["", "weighted F1 per fold (window / event):"]
        for fold in metrics["folds"]:
            lines.append(f"  fold {fold['fold']}: {_fmt_score(fold['window']['weighted_f1'])} / "
                         f"{_fmt_score(fold['event']['weighted_f1'])}")
    if metrics.get("mean"):
        lines += ["", f"mean weighted F1, window level: {_fmt_score(metrics['mean']['window'])}",
                  f"mean weighted F1, event level:  {_fmt_score(metrics['mean']['event'])}"]
    if metrics.get("profile"):
        lines += ["", metrics["profile"]]
    return "\n".join(lines) + "\n"


def write_report(manifest: dict, metrics: dict, out_dir) -> Path:
    """Write ``metrics.json`` and ``report.txt`` into ``out_dir``; returns the report path."""
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise OSError(f"output directory {out_dir} does not exist")
    write_json(out_dir / METRICS_JSON, metrics)
    path = out_dir / REPORT_TXT
    path.write_text(render_report(manifest, metrics), encoding="utf-8")
    return path


def write_confusion_csv(path, cm) -> None:
    k = len(cm)
    names = [SEIZURE_TYPES[c] if c < len(SEIZURE_TYPES) else str(c) for c in range(k)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["truth\\predicted"] + names)
        for name, row in zip(names, cm):
            writer.writerow([name] + list(row))
