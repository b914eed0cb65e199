"""Shared geometric primitives: rigid transforms, voxel indexing, range images.

Conventions used by every other module:
  - point clouds are (N, 3) float64 arrays in meters
  - voxel binning uses floor, so a coordinate exactly on a voxel boundary
    belongs to the upper cell
  - range(p) is the full Euclidean norm; radial_2d(p) = sqrt(x^2 + y^2) is
    the separate horizontal radius used for the local-map crop
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9


class ValidationError(ValueError):
    """Raised when input data violates an invariant (NaN point, bad quaternion, ...)."""


class ConfigError(ValueError):
    """Raised for invalid configuration values (non-positive resolution, ...)."""


def as_points(points) -> np.ndarray:
    """Coerce input to an (N, 3) float64 array and reject non-finite entries."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValidationError(f"expected (N, 3) points, got shape {pts.shape}")
    finite = np.isfinite(pts).all(axis=1)
    if not finite.all():
        idx = int(np.flatnonzero(~finite)[0])
        raise ValidationError(f"non-finite point at index {idx}: {pts[idx]}")
    return pts


def ranges(points: np.ndarray) -> np.ndarray:
    """Full Euclidean range of each point."""
    return np.linalg.norm(points, axis=1)


def radial_2d(points: np.ndarray) -> np.ndarray:
    """Horizontal radius sqrt(x^2 + y^2) of each point."""
    return np.hypot(points[:, 0], points[:, 1])


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform: p_out = rotation @ p_in + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.isfinite(rot).all() or not np.isfinite(trans).all():
            raise ValidationError("pose contains non-finite values")
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-6:
            raise ValidationError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise ValidationError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        rot.setflags(write=False)
        trans.setflags(write=False)

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3(np.eye(3), np.zeros(3))

    @staticmethod
    def from_yaw(yaw: float, translation=(0.0, 0.0, 0.0)) -> "PoseSE3":
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return PoseSE3(rot, np.asarray(translation, dtype=np.float64))

    @staticmethod
    def from_quaternion(qx, qy, qz, qw, translation=(0.0, 0.0, 0.0)) -> "PoseSE3":
        norm = math.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
        if abs(norm - 1.0) > 1e-6:
            raise ValidationError(f"quaternion norm {norm} deviates from 1 by more than 1e-6")
        x, y, z, w = qx / norm, qy / norm, qz / norm, qw / norm
        rot = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )
        return PoseSE3(rot, np.asarray(translation, dtype=np.float64))

    def to_quaternion(self) -> np.ndarray:
        """Return (qx, qy, qz, qw) with qw >= 0."""
        r = self.rotation
        t = np.trace(r)
        if t > 0:
            s = math.sqrt(t + 1.0) * 2
            qw = 0.25 * s
            qx = (r[2, 1] - r[1, 2]) / s
            qy = (r[0, 2] - r[2, 0]) / s
            qz = (r[1, 0] - r[0, 1]) / s
        else:
            i = int(np.argmax(np.diag(r)))
            j, k = (i + 1) % 3, (i + 2) % 3
            s = math.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2
            q = np.zeros(4)
            q[i] = 0.25 * s
            q[3] = (r[k, j] - r[j, k]) / s
            q[j] = (r[j, i] + r[i, j]) / s
            q[k] = (r[k, i] + r[i, k]) / s
            qx, qy, qz, qw = q
        quat = np.array([qx, qy, qz, qw])
        if quat[3] < 0:
            quat = -quat
        return quat / np.linalg.norm(quat)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self * other: apply `other` first, then `self`."""
        return PoseSE3(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "PoseSE3":
        rot_t = self.rotation.T
        return PoseSE3(rot_t, -rot_t @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


def transform_points(pose: PoseSE3, points) -> np.ndarray:
    """Apply a rigid transform to points, validating them first."""
    return pose.apply(as_points(points))


# --- voxel indexing -------------------------------------------------------

# Packed keys hold three 21-bit signed indices in one int64 for fast hashing.
_PACK_OFFSET = 1 << 20
_PACK_LIMIT = 1 << 21


def voxel_keys(points: np.ndarray, resolution: float) -> np.ndarray:
    """Floor-convention (N, 3) integer voxel keys."""
    if resolution <= 0:
        raise ConfigError(f"resolution must be positive, got {resolution}")
    return np.floor(np.asarray(points, dtype=np.float64) / resolution).astype(np.int64)


def voxel_key(point, resolution: float) -> tuple[int, int, int]:
    """Voxel key of a single point."""
    k = voxel_keys(as_points(point), resolution)[0]
    return int(k[0]), int(k[1]), int(k[2])


def pack_keys(keys: np.ndarray) -> np.ndarray:
    """Pack (N, 3) integer keys into int64 scalars (range +-2^20 per axis)."""
    k = np.asarray(keys, dtype=np.int64)
    if k.size and (k.min() < -_PACK_OFFSET or k.max() >= _PACK_OFFSET):
        raise ValidationError("voxel index out of packable range (+-2^20)")
    off = k + _PACK_OFFSET
    return (off[:, 0] << 42) | (off[:, 1] << 21) | off[:, 2]


def unpack_keys(packed: np.ndarray) -> np.ndarray:
    p = np.asarray(packed, dtype=np.int64)
    mask = _PACK_LIMIT - 1
    out = np.empty((p.size, 3), dtype=np.int64)
    out[:, 0] = (p >> 42) & mask
    out[:, 1] = (p >> 21) & mask
    out[:, 2] = p & mask
    return out - _PACK_OFFSET


class VoxelMap:
    """Sparse set of occupied voxel keys at a fixed resolution.

    Immutable after construction; the packed key array is sorted and unique,
    so membership tests are searchsorted lookups.
    """

    def __init__(self, packed_keys: np.ndarray, resolution: float):
        if resolution <= 0:
            raise ConfigError(f"resolution must be positive, got {resolution}")
        packed = np.unique(np.asarray(packed_keys, dtype=np.int64))
        packed.setflags(write=False)
        self._packed = packed
        self.resolution = float(resolution)

    @staticmethod
    def empty(resolution: float) -> "VoxelMap":
        return VoxelMap(np.empty(0, dtype=np.int64), resolution)

    @staticmethod
    def from_points(points, resolution: float) -> "VoxelMap":
        pts = as_points(points) if len(points) else np.empty((0, 3))
        return VoxelMap(pack_keys(voxel_keys(pts, resolution)), resolution)

    @staticmethod
    def from_keys(keys, resolution: float) -> "VoxelMap":
        k = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        return VoxelMap(pack_keys(k), resolution)

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    def keys(self) -> np.ndarray:
        return unpack_keys(self._packed)

    def centroids(self) -> np.ndarray:
        return (self.keys() + 0.5) * self.resolution

    def contains_packed(self, packed: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._packed, packed)
        idx = np.clip(idx, 0, len(self._packed) - 1) if len(self._packed) else idx
        if len(self._packed) == 0:
            return np.zeros(len(packed), dtype=bool)
        return self._packed[idx] == packed

    def __len__(self) -> int:
        return int(self._packed.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelMap):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(
            self._packed, other._packed
        )

    def __hash__(self):
        return hash((self.resolution, self._packed.tobytes()))

    def intersection_size(self, other: "VoxelMap") -> int:
        return int(np.isin(self._packed, other._packed, assume_unique=True).sum())


# --- bounding boxes -------------------------------------------------------


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box given by min/max corners in the world frame."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if np.any(hi < lo):
            raise ValidationError(f"box min {lo} exceeds max {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        lo.setflags(write=False)
        hi.setflags(write=False)

    @staticmethod
    def of_points(points: np.ndarray) -> "BoundingBox":
        pts = np.asarray(points, dtype=np.float64)
        return BoundingBox(pts.min(axis=0), pts.max(axis=0))

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    def translated(self, offset) -> "BoundingBox":
        off = np.asarray(offset, dtype=np.float64)
        return BoundingBox(self.lo + off, self.hi + off)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)


# --- scans ----------------------------------------------------------------


@dataclass(frozen=True)
class LabeledScan:
    """One LiDAR sweep: sensor-frame points plus optional dynamic flags."""

    points: np.ndarray
    labels: np.ndarray | None
    timestamp: float

    def __post_init__(self):
        pts = as_points(self.points) if len(self.points) else np.empty((0, 3))
        object.__setattr__(self, "points", pts)
        pts.setflags(write=False)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=bool).reshape(-1)
            if len(lab) != len(pts):
                raise ValidationError(
                    f"labels length {len(lab)} != points length {len(pts)}"
                )
            object.__setattr__(self, "labels", lab)
            lab.setflags(write=False)

    def __len__(self) -> int:
        return len(self.points)


# --- range images ---------------------------------------------------------


@dataclass(frozen=True)
class RangeImageConfig:
    """Spherical projection geometry. Angles in radians, vertical then horizontal."""

    rows: int = 32
    cols: int = 900
    fov_v: tuple[float, float] = (math.radians(-16.0), math.radians(16.0))
    fov_h: tuple[float, float] = (-math.pi, math.pi)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("range image must have at least one row and column")
        if not (self.fov_v[0] < self.fov_v[1] and self.fov_h[0] < self.fov_h[1]):
            raise ConfigError("FOV angles must be strictly ordered")

    @property
    def row_step(self) -> float:
        return (self.fov_v[1] - self.fov_v[0]) / self.rows

    @property
    def col_step(self) -> float:
        return (self.fov_h[1] - self.fov_h[0]) / self.cols

    @property
    def full_circle(self) -> bool:
        return abs((self.fov_h[1] - self.fov_h[0]) - 2 * math.pi) < 1e-12


@dataclass(frozen=True)
class RangeImage:
    """Per-pixel minimum range; NaN marks pixels receiving no point."""

    config: RangeImageConfig
    pixels: np.ndarray

    def is_empty(self) -> np.ndarray:
        return np.isnan(self.pixels)


def pixel_indices(points: np.ndarray, config: RangeImageConfig):
    """Vectorized pixel binning.

    Returns (rows, cols, valid): rows/cols are int arrays, valid marks points
    whose direction falls inside the FOV (zero-range points are invalid).
    """
    pts = np.asarray(points, dtype=np.float64)
    rng = ranges(pts)
    valid = rng > 0
    safe = np.where(valid, rng, 1.0)
    elev = np.arcsin(np.clip(pts[:, 2] / safe, -1.0, 1.0))
    az = np.arctan2(pts[:, 1], pts[:, 0])

    r = np.floor((elev - config.fov_v[0]) / config.row_step).astype(np.int64)
    c = np.floor((az - config.fov_h[0]) / config.col_step).astype(np.int64)
    if config.full_circle:
        c = np.mod(c, config.cols)
    valid = valid & (r >= 0) & (r < config.rows) & (c >= 0) & (c < config.cols)
    return r, c, valid


def pixel_of(point, config: RangeImageConfig):
    """Pixel whose angular cone contains the point, or None if outside the FOV."""
    pts = as_points(point)
    r, c, valid = pixel_indices(pts, config)
    if not valid[0]:
        return None
    return int(r[0]), int(c[0])


def project_range_image(points, config: RangeImageConfig) -> RangeImage:
    """Project points to a range image; each pixel keeps its minimum range."""
    pixels = np.full((config.rows, config.cols), np.nan)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts):
        r, c, valid = pixel_indices(pts, config)
        rng = ranges(pts)[valid]
        flat = r[valid] * config.cols + c[valid]
        buf = np.full(config.rows * config.cols, np.inf)
        np.minimum.at(buf, flat, rng)
        buf[np.isinf(buf)] = np.nan
        pixels = buf.reshape(config.rows, config.cols)
    pixels.setflags(write=False)
    return RangeImage(config, pixels)


def ray_directions(config: RangeImageConfig) -> np.ndarray:
    """Unit direction through the center of every pixel, shape (rows*cols, 3)."""
    elev = config.fov_v[0] + (np.arange(config.rows) + 0.5) * config.row_step
    az = config.fov_h[0] + (np.arange(config.cols) + 0.5) * config.col_step
    ee, aa = np.meshgrid(elev, az, indexing="ij")
    ce = np.cos(ee)
    dirs = np.stack([ce * np.cos(aa), ce * np.sin(aa), np.sin(ee)], axis=-1)
    return dirs.reshape(-1, 3)
