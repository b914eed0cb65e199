"""Text serialization: canonical byte-identical writes and line diagnostics."""

import numpy as np
import pytest

from smat.formats import (
    FormatError,
    read_map,
    read_poses,
    read_scan,
    read_tracks,
    write_map,
    write_poses,
    write_scan,
    write_tracks,
)
from smat.geometry import BoundingBox, LabeledScan, PoseSE3, VoxelMap
from smat.metrics import TrackRecord


def roundtrip(tmp_path, write, read, value, name):
    """Write, read back, write again: the two files must match byte for byte."""
    p1, p2 = tmp_path / f"{name}_1.txt", tmp_path / f"{name}_2.txt"
    write(p1, value)
    back = read(p1)
    write(p2, back)
    assert p1.read_bytes() == p2.read_bytes()
    return back


# --- scans ---------------------------------------------------------------------


def test_scan_roundtrip_labeled(tmp_path):
    scan = LabeledScan(
        points=np.array([[1.0, -2.5, 0.125], [0.0, 0.0, 3.0], [9.9, 9.9, -9.9]]),
        labels=np.array([True, False, True]),
        timestamp=1.5,
    )
    back = roundtrip(tmp_path, write_scan, read_scan, scan, "scan")
    assert np.allclose(back.points, scan.points)
    assert np.array_equal(back.labels, scan.labels)
    assert back.timestamp == 1.5


def test_scan_roundtrip_empty_and_unlabeled(tmp_path):
    empty = LabeledScan(points=np.empty((0, 3)), labels=None, timestamp=0.0)
    back = roundtrip(tmp_path, write_scan, read_scan, empty, "empty")
    assert len(back) == 0 and back.labels is None


def test_scan_roundtrip_fuzzed(tmp_path, rng):
    scan = LabeledScan(
        points=rng.uniform(-100, 100, (1000, 3)),
        labels=rng.random(1000) < 0.3,
        timestamp=float(rng.uniform(0, 1000)),
    )
    roundtrip(tmp_path, write_scan, read_scan, scan, "fuzz")


def write_lines(tmp_path, name, lines):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


@pytest.mark.parametrize(
    "lines, line_no",
    [
        (["BOGUS", "1 2 3"], 1),
        (["SMAT-SCAN v1 0.000000 2 0", "1 2 3"], 1),  # count mismatch
        (["SMAT-SCAN v1 0.000000 1 0", "1 nan 3"], 2),
        (["SMAT-SCAN v1 0.000000 1 0", "1 2"], 2),
        (["SMAT-SCAN v1 0.000000 2 1", "1 2 3 1", "1 2 3 x"], 3),
    ],
)
def test_scan_errors_carry_line_numbers(tmp_path, lines, line_no):
    path = write_lines(tmp_path, "bad_scan.txt", lines)
    with pytest.raises(FormatError, match=f"line {line_no}:"):
        read_scan(path)


# --- poses ---------------------------------------------------------------------


def test_poses_roundtrip(tmp_path, rng):
    poses = []
    t = 0.0
    for _ in range(20):
        t += float(rng.uniform(0.05, 0.5))
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        poses.append((t, PoseSE3.from_quaternion(*q, translation=rng.uniform(-5, 5, 3))))
    p1, p2 = tmp_path / "poses_1.txt", tmp_path / "poses_2.txt"
    write_poses(p1, poses)
    write_poses(p2, poses)  # writing the same value twice is byte-identical
    assert p1.read_bytes() == p2.read_bytes()
    back = read_poses(p1)
    assert len(back) == 20
    for (ta, pa), (tb, pb) in zip(poses, back):
        assert tb == pytest.approx(ta, abs=1e-6)
        # quaternions are stored at 9 decimals and renormalized on read
        assert np.allclose(pa.rotation, pb.rotation, atol=1e-6)
        assert np.allclose(pa.translation, pb.translation, atol=1e-6)


def test_poses_empty_file(tmp_path):
    back = roundtrip(tmp_path, write_poses, read_poses, [], "noposes")
    assert back == []


@pytest.mark.parametrize(
    "lines, line_no",
    [
        (["0.0 0 0 0 0 0 0"], 1),  # 7 fields
        (["0.0 0 0 0 0 0 0 1", "0.0 0 0 0 0 0 0 1"], 2),  # non-increasing t
        (["0.0 0 0 0 0.5 0.5 0 1"], 1),  # bad quaternion norm
        (["0.0 0 0 inf 0 0 0 1"], 1),
    ],
)
def test_pose_errors_carry_line_numbers(tmp_path, lines, line_no):
    path = write_lines(tmp_path, "bad_poses.txt", lines)
    with pytest.raises(FormatError, match=f"line {line_no}:"):
        read_poses(path)


# --- maps ----------------------------------------------------------------------


def test_map_roundtrip(tmp_path, rng):
    vmap = VoxelMap.from_keys(rng.integers(-50, 50, (300, 3)), 0.2)
    back = roundtrip(tmp_path, write_map, read_map, vmap, "map")
    assert back == vmap


def test_map_roundtrip_empty(tmp_path):
    back = roundtrip(tmp_path, write_map, read_map, VoxelMap.empty(0.25), "emptymap")
    assert len(back) == 0 and back.resolution == 0.25


@pytest.mark.parametrize(
    "lines, line_no",
    [
        (["NOPE"], 1),
        (["SMAT-MAP v1 0.200000 2", "0 0 0"], 1),  # count mismatch
        (["SMAT-MAP v1 0.200000 1", "0 0.5 0"], 2),  # non-integer index
        (["SMAT-MAP v1 0.200000 2", "1 2 3", "1 2 3"], 2),  # duplicate key
    ],
)
def test_map_errors_carry_line_numbers(tmp_path, lines, line_no):
    path = write_lines(tmp_path, "bad_map.txt", lines)
    with pytest.raises(FormatError, match=f"line {line_no}:"):
        read_map(path)


# --- tracks ------------------------------------------------------------------------


def test_tracks_roundtrip(tmp_path, rng):
    records = []
    for frame in range(5):
        for tid in rng.choice(20, size=4, replace=False):
            lo = rng.uniform(-10, 10, 3)
            records.append(
                TrackRecord(frame, int(tid), BoundingBox(lo, lo + rng.uniform(0.1, 2, 3)))
            )
    back = roundtrip(tmp_path, write_tracks, read_tracks, records, "tracks")
    assert len(back) == len(records)
    assert [(r.frame, r.track_id) for r in back] == sorted(
        (r.frame, r.track_id) for r in records
    )


@pytest.mark.parametrize(
    "lines, line_no",
    [
        (["WRONG"], 1),
        (["SMAT-TRACKS v1", "0 1 0 0 0 1 1"], 2),  # 7 fields
        (["SMAT-TRACKS v1", "0 1 0 0 0 1 1 1", "0 1 0 0 0 1 1 1"], 3),  # dup pair
        (["SMAT-TRACKS v1", "0 1 0 0 0 -1 1 1"], 2),  # inverted box
        (["SMAT-TRACKS v1", "0 x 0 0 0 1 1 1"], 2),
    ],
)
def test_track_errors_carry_line_numbers(tmp_path, lines, line_no):
    path = write_lines(tmp_path, "bad_tracks.txt", lines)
    with pytest.raises(FormatError, match=f"line {line_no}:"):
        read_tracks(path)
