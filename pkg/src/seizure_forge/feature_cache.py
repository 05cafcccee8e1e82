"""SESP feature-cache files.

Layout (little endian)::

    b"SESP" | u16 version
    repeated records:
        u16 f | f32 w | f32 o | u16 H | u16 W | u8 label | u8 member | u32 event | f32 start
        3*H*W f32 values (channel-first)

``member`` is the ensemble member whose sampling parameters produced the
record, ``event`` the manifest row, ``start`` the window offset in seconds.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .msfs import FeatureSubspace, SamplingParams

MAGIC = b"SESP"
VERSION = 1
_RECORD = struct.Struct("<HffHHBBIf")


def write_feature_cache(path, subspaces) -> None:
    parts = [MAGIC, struct.pack("<H", VERSION)]
    for member, sub in enumerate(subspaces):
        p = sub.params
        _, _, h, w = sub.x.shape if sub.x.ndim == 4 else (0, 3, 0, 0)
        for i in range(len(sub)):
            parts.append(_RECORD.pack(p.f, p.w, p.o, h, w, int(sub.labels[i]), member,
                                      int(sub.events[i]), float(sub.starts[i])))
            parts.append(np.ascontiguousarray(sub.x[i], dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_feature_cache(path) -> list[FeatureSubspace]:
    """Records grouped by member, in member order."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a feature cache (bad magic {raw[:4]!r})")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported feature cache version {version}")
    pos = 6
    groups: dict[int, dict] = {}
    while pos < len(raw):
        if pos + _RECORD.size > len(raw):
            raise ValueError(f"{path}: truncated record header at byte {pos}")
        f, w, o, h, wd, label, member, event, start = _RECORD.unpack_from(raw, pos)
        pos += _RECORD.size
        size = 3 * h * wd
        if pos + 4 * size > len(raw):
            raise ValueError(f"{path}: truncated record payload at byte {pos}")
        x = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(3, h, wd)
        pos += 4 * size
        g = groups.setdefault(member, {"params": (f, w, o), "x": [], "labels": [], "events": [], "starts": []})
        if g["params"] != (f, w, o):
            raise ValueError(f"{path}: member {member} mixes sampling parameters")
        g["x"].append(x)
        g["labels"].append(label)
        g["events"].append(event)
        g["starts"].append(start)

    out = []
    for member in sorted(groups):
        g = groups[member]
        f, w, o = g["params"]
        out.append(FeatureSubspace(
            SamplingParams(int(f), float(w), float(o)),
            np.stack(g["x"]).astype(np.float32),
            np.array(g["labels"], np.int64),
            np.array(g["events"], np.int64),
            np.array(g["starts"], np.float64),
        ))
    return out
