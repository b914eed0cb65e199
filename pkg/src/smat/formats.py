"""Plain-text file formats for scans, poses, maps, and tracks.

All writers emit a canonical form (fixed decimal precision, sorted keys) so
that identical inputs produce byte-identical files. Readers validate line by
line and raise FormatError with the offending line number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BoundingBox, LabeledScan, PoseSE3, VoxelMap
from .metrics import TrackRecord

SCAN_MAGIC = "SMAT-SCAN v1"
MAP_MAGIC = "SMAT-MAP v1"
TRACK_MAGIC = "SMAT-TRACKS v1"

_COORD = "{:.6f}"
_QUAT = "{:.9f}"


class FormatError(Exception):
    """Malformed file contents; message includes a 1-based line number."""


def _fail(line_no: int, msg: str):
    raise FormatError(f"line {line_no}: {msg}")


def _parse_floats(fields: list[str], line_no: int) -> list[float]:
    values = []
    for f in fields:
        try:
            v = float(f)
        except ValueError:
            _fail(line_no, f"not a number: {f!r}")
        if not math.isfinite(v):
            _fail(line_no, f"non-finite value: {f!r}")
        values.append(v)
    return values


# --- scan files -----------------------------------------------------------------


def write_scan(path, scan: LabeledScan) -> None:
    labeled = scan.labels is not None
    lines = [f"{SCAN_MAGIC} {_COORD.format(scan.timestamp)} {len(scan)} {int(labeled)}"]
    for i in range(len(scan)):
        coords = " ".join(_COORD.format(c) for c in scan.points[i])
        if labeled:
            coords += f" {int(scan.labels[i])}"
        lines.append(coords)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_scan(path) -> LabeledScan:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(SCAN_MAGIC):
        _fail(1, f"expected header {SCAN_MAGIC!r}")
    head = lines[0].split()
    if len(head) != 5:
        _fail(1, "scan header needs timestamp, point count, and labeled flag")
    (timestamp,) = _parse_floats(head[2:3], 1)
    try:
        count = int(head[3])
        labeled = int(head[4])
    except ValueError:
        _fail(1, "point count and labeled flag must be integers")
    if labeled not in (0, 1):
        _fail(1, f"labeled flag must be 0 or 1, got {labeled}")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != count:
        _fail(1, f"header says {count} points but file has {len(body)}")
    n_fields = 4 if labeled else 3
    points = np.zeros((count, 3))
    labels = np.zeros(count, dtype=bool) if labeled else None
    for i, ln in enumerate(body):
        fields = ln.split()
        line_no = i + 2
        if len(fields) != n_fields:
            _fail(line_no, f"expected {n_fields} fields, got {len(fields)}")
        points[i] = _parse_floats(fields[:3], line_no)
        if labeled:
            if fields[3] not in ("0", "1"):
                _fail(line_no, f"label must be 0 or 1, got {fields[3]!r}")
            labels[i] = fields[3] == "1"
    return LabeledScan(points=points, labels=labels, timestamp=timestamp)


# --- pose files -----------------------------------------------------------------


def write_poses(path, poses: list[tuple[float, PoseSE3]]) -> None:
    lines = []
    for timestamp, pose in poses:
        q = pose.to_quaternion()
        t = pose.translation
        lines.append(
            f"{_COORD.format(timestamp)} "
            + " ".join(_COORD.format(c) for c in t)
            + " "
            + " ".join(_QUAT.format(c) for c in q)
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def read_poses(path) -> list[tuple[float, PoseSE3]]:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    poses: list[tuple[float, PoseSE3]] = []
    last_t = None
    for i, ln in enumerate(lines):
        line_no = i + 1
        fields = ln.split()
        if len(fields) != 8:
            _fail(line_no, f"expected 8 fields, got {len(fields)}")
        vals = _parse_floats(fields, line_no)
        t, tx, ty, tz, qx, qy, qz, qw = vals
        if last_t is not None and t <= last_t:
            _fail(line_no, f"timestamp {t} not after {last_t}")
        last_t = t
        norm = math.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
        if abs(norm - 1.0) > 1e-6:
            _fail(line_no, f"quaternion norm {norm} is not 1")
        poses.append(
            (t, PoseSE3.from_quaternion(qx, qy, qz, qw, translation=np.array([tx, ty, tz])))
        )
    return poses


# --- map files ------------------------------------------------------------------


def write_map(path, vmap: VoxelMap) -> None:
    from .geometry import unpack_keys

    lines = [f"{MAP_MAGIC} {_COORD.format(vmap.resolution)} {len(vmap)}"]
    idx = unpack_keys(vmap.packed)  # packed keys are stored sorted -> canonical order
    for row in idx:
        lines.append(f"{row[0]} {row[1]} {row[2]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_map(path) -> VoxelMap:
    from .geometry import pack_keys

    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(MAP_MAGIC):
        _fail(1, f"expected header {MAP_MAGIC!r}")
    head = lines[0].split()
    if len(head) != 4:
        _fail(1, "map header needs resolution and voxel count")
    (resolution,) = _parse_floats(head[2:3], 1)
    try:
        count = int(head[3])
    except ValueError:
        _fail(1, "voxel count must be an integer")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != count:
        _fail(1, f"header says {count} voxels but file has {len(body)}")
    idx = np.zeros((count, 3), dtype=np.int64)
    for i, ln in enumerate(body):
        fields = ln.split()
        line_no = i + 2
        if len(fields) != 3:
            _fail(line_no, f"expected 3 fields, got {len(fields)}")
        try:
            idx[i] = [int(f) for f in fields]
        except ValueError:
            _fail(line_no, "voxel indices must be integers")
    packed = pack_keys(idx)
    if len(np.unique(packed)) != count:
        dupes = np.flatnonzero(np.diff(np.sort(packed)) == 0)
        _fail(int(dupes[0]) + 2 if len(dupes) else 2, "duplicate voxel key")
    return VoxelMap(packed, resolution)


# --- track files ----------------------------------------------------------------


def write_tracks(path, records: list[TrackRecord]) -> None:
    lines = [TRACK_MAGIC]
    for rec in sorted(records, key=lambda r: (r.frame, r.track_id)):
        bounds = np.concatenate([rec.box.lo, rec.box.hi])
        lines.append(
            f"{rec.frame} {rec.track_id} " + " ".join(_COORD.format(c) for c in bounds)
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_tracks(path) -> list[TrackRecord]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != TRACK_MAGIC:
        _fail(1, f"expected header {TRACK_MAGIC!r}")
    records: list[TrackRecord] = []
    seen: set[tuple[int, int]] = set()
    for i, ln in enumerate(lines[1:]):
        if not ln.strip():
            continue
        line_no = i + 2
        fields = ln.split()
        if len(fields) != 8:
            _fail(line_no, f"expected 8 fields, got {len(fields)}")
        try:
            frame, track_id = int(fields[0]), int(fields[1])
        except ValueError:
            _fail(line_no, "frame and id must be integers")
        key = (frame, track_id)
        if key in seen:
            _fail(line_no, f"duplicate (frame, id) pair {key}")
        seen.add(key)
        vals = _parse_floats(fields[2:], line_no)
        lo, hi = np.array(vals[:3]), np.array(vals[3:])
        if np.any(hi < lo):
            _fail(line_no, "box max must not be below box min")
        records.append(TrackRecord(frame=frame, track_id=track_id, box=BoundingBox(lo, hi)))
    return records
