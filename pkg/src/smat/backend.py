"""Occupancy-filtered submap construction and global map merging.

Buffered static scans near a query pose are fused into a per-voxel
(n_occ, n_free) counter table. n_occ counts distinct scans contributing a
point to the voxel; n_free is estimated by the range-image visibility check
(d < gamma * pixel range) or, in the exact variant, by 3D grid ray traversal.
Voxels with n_occ / (n_occ + n_free) above the threshold are occupied.
Submaps merge globally by the nearest-submap rule.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    ConfigError,
    PoseSE3,
    RangeImage,
    RangeImageConfig,
    VoxelMap,
    pack_keys,
    pixel_indices,
    project_range_image,
    ranges,
    unpack_keys,
    voxel_keys,
)
from .raytrace import traversed_voxels

VARIANT_BOTH = "both"
VARIANT_VISIBILITY_ONLY = "visibility_only"
VARIANT_OCCUPANCY_ONLY = "occupancy_only"
_VARIANTS = (VARIANT_BOTH, VARIANT_VISIBILITY_ONLY, VARIANT_OCCUPANCY_ONLY)


@dataclass(frozen=True)
class BackEndParams:
    r_query: float = 5.0
    map_resolution: float = 0.2
    gamma: float = 0.9
    occ_threshold: float = 0.5
    submap_spacing: float = 2.0

    def __post_init__(self):
        if self.r_query <= 0 or self.map_resolution <= 0 or self.submap_spacing <= 0:
            raise ConfigError("radii, resolution, and spacing must be positive")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError(f"gamma must be in [0, 1), got {self.gamma}")
        if not (0.0 < self.occ_threshold < 1.0):
            raise ConfigError("occ_threshold must be in (0, 1)")


@dataclass(frozen=True)
class BufferEntry:
    scan_id: int
    points_world: np.ndarray
    pose: PoseSE3
    timestamp: float


class StaticScanBuffer:
    """Timestamp-ordered buffer of world-frame static scans with their poses."""

    def __init__(self):
        self.entries: list[BufferEntry] = []
        self._next_id = 0

    def append(self, points_world: np.ndarray, pose: PoseSE3, timestamp: float) -> int:
        if self.entries and timestamp < self.entries[-1].timestamp:
            raise ConfigError("buffer entries must be appended in timestamp order")
        entry = BufferEntry(self._next_id, np.asarray(points_world), pose, timestamp)
        self.entries.append(entry)
        self._next_id += 1
        return entry.scan_id

    def prune_far(self, position: np.ndarray, radius: float, keep_ids: set[int]):
        """Drop entries farther than radius from position, keeping keep_ids."""
        self.entries = [
            e
            for e in self.entries
            if e.scan_id in keep_ids
            or np.linalg.norm(e.pose.translation - position) <= radius
        ]

    def __len__(self) -> int:
        return len(self.entries)


def query_scans(
    buffer: StaticScanBuffer, query_pose: PoseSE3, params: BackEndParams
) -> list[tuple[BufferEntry, np.ndarray]]:
    """Buffer entries within R_query of the query pose, points in the query frame."""
    inv = query_pose.inverse()
    q = query_pose.translation
    out = []
    for entry in buffer.entries:
        if np.linalg.norm(entry.pose.translation - q) < params.r_query:
            out.append((entry, inv.apply(entry.points_world)))
    return out


class OccupancySubmap:
    """Per-voxel occupancy counters anchored at a query pose.

    Scans are added incrementally; the result is order-independent because
    every (voxel, scan) pair is checked exactly once regardless of arrival
    order. Counters are keyed by packed world-frame voxel keys so that the
    global merge needs no regridding; visibility is evaluated per scan from
    the scan's own sensor pose.
    """

    def __init__(
        self,
        origin: PoseSE3,
        params: BackEndParams,
        beam: RangeImageConfig,
        variant: str = VARIANT_BOTH,
    ):
        if variant not in _VARIANTS:
            raise ConfigError(f"unknown back-end variant {variant!r}")
        self.origin = origin
        self.params = params
        self.beam = beam
        self.variant = variant
        self.scan_ids: set[int] = set()
        self._keys = np.empty(0, dtype=np.int64)  # sorted packed keys with n_occ >= 1
        self._n_occ = np.empty(0, dtype=np.int64)
        self._n_free = np.empty(0, dtype=np.int64)
        # each contributing scan's range image, paired with the inverse of its
        # sensor pose: visibility is evaluated from the producing viewpoint
        self._images: list[tuple[PoseSE3, RangeImage]] = []
        # free evidence for voxels not (yet) holding points, keyed by packed key
        self._free_orphans: dict[int, int] = {}

    # -- incremental construction ------------------------------------------

    def add_scan(self, entry: BufferEntry):
        if entry.scan_id in self.scan_ids:
            return
        self.scan_ids.add(entry.scan_id)
        res = self.params.map_resolution
        # counters are keyed by world-frame voxels so the merge is alias-free;
        # the visibility check still runs in the query frame
        scan_keys = (
            np.unique(pack_keys(voxel_keys(entry.points_world, res)))
            if len(entry.points_world)
            else np.empty(0, dtype=np.int64)
        )
        new_keys = scan_keys[~np.isin(scan_keys, self._keys, assume_unique=True)]
        if len(new_keys):
            self._insert_keys(new_keys)
        # n_occ: one count per contributing scan
        pos = np.searchsorted(self._keys, scan_keys)
        self._n_occ[pos] += 1

        if self.variant == VARIANT_OCCUPANCY_ONLY:
            self._add_scan_exact(entry, new_keys)
        else:
            self._add_scan_visibility(entry, new_keys)

    def _insert_keys(self, new_keys: np.ndarray):
        new_free = np.array(
            [self._free_orphans.pop(int(k), 0) for k in new_keys], dtype=np.int64
        )
        merged = np.concatenate([self._keys, new_keys])
        order = np.argsort(merged, kind="mergesort")
        self._keys = merged[order]
        self._n_occ = np.concatenate([self._n_occ, np.zeros(len(new_keys), np.int64)])[order]
        self._n_free = np.concatenate([self._n_free, new_free])[order]

    def _centroids_w(self, packed: np.ndarray) -> np.ndarray:
        return (unpack_keys(packed) + 0.5) * self.params.map_resolution

    def _add_scan_visibility(self, entry: BufferEntry, new_keys: np.ndarray):
        inv = entry.pose.inverse()
        sensor = (inv, project_range_image(inv.apply(entry.points_world), self.beam))
        # new voxels against every image (including the new one)
        if len(new_keys):
            idx = np.searchsorted(self._keys, new_keys)
            cents = self._centroids_w(new_keys)
            for img_inv, img in self._images:
                self._n_free[idx] += self._free_hits(cents, img_inv, img)
            self._n_free[idx] += self._free_hits(cents, *sensor)
        # previously known voxels against the new image only
        old_mask = np.ones(len(self._keys), dtype=bool)
        old_mask[np.searchsorted(self._keys, new_keys)] = False
        if old_mask.any():
            cents = self._centroids_w(self._keys[old_mask])
            self._n_free[old_mask] += self._free_hits(cents, *sensor)
        self._images.append(sensor)

    def _free_hits(
        self, centroids_w: np.ndarray, inv_pose: PoseSE3, image: RangeImage
    ) -> np.ndarray:
        """1 where a world centroid is seen free by the scan's safe-sphere test,
        evaluated in the scan's own sensor frame.

        Inlined transform/projection: this runs once per (scan, voxel batch)
        and dominates back-end time, so it avoids the generic helpers.
        """
        beam = self.beam
        local = centroids_w @ inv_pose.rotation.T + inv_pose.translation
        d = np.sqrt(np.einsum("ij,ij->i", local, local))
        valid = d > 0
        safe = np.where(valid, d, 1.0)
        elev = np.arcsin(np.clip(local[:, 2] / safe, -1.0, 1.0))
        az = np.arctan2(local[:, 1], local[:, 0])
        r = np.floor((elev - beam.fov_v[0]) / beam.row_step).astype(np.int64)
        c = np.floor((az - beam.fov_h[0]) / beam.col_step).astype(np.int64)
        if beam.full_circle:
            c = np.mod(c, beam.cols)
            valid &= (r >= 0) & (r < beam.rows)
        else:
            valid &= (r >= 0) & (r < beam.rows) & (c >= 0) & (c < beam.cols)
        hits = np.zeros(len(centroids_w), dtype=np.int64)
        vi = np.flatnonzero(valid)
        if len(vi):
            pix = image.pixels[r[vi], c[vi]]
            with np.errstate(invalid="ignore"):
                ok = d[vi] < self.params.gamma * pix
            hits[vi[ok]] = 1
        return hits

    def _add_scan_exact(self, entry: BufferEntry, new_keys: np.ndarray):
        if not len(entry.points_world):
            return
        traversed = traversed_voxels(
            entry.pose.translation, entry.points_world, self.params.map_resolution
        )
        # a voxel traversed by >= 1 ray of this scan gets one free count
        known = np.isin(traversed, self._keys, assume_unique=True)
        pos = np.searchsorted(self._keys, traversed[known])
        self._n_free[pos] += 1
        for k in traversed[~known]:
            ki = int(k)
            self._free_orphans[ki] = self._free_orphans.get(ki, 0) + 1

    # -- derived views -------------------------------------------------------

    @property
    def counters(self) -> dict[tuple[int, int, int], tuple[int, int]]:
        keys = unpack_keys(self._keys)
        return {
            (int(k[0]), int(k[1]), int(k[2])): (int(o), int(f))
            for k, o, f in zip(keys, self._n_occ, self._n_free)
        }

    def occupied_mask(self) -> np.ndarray:
        if self.variant == VARIANT_VISIBILITY_ONLY:
            return self._n_free == 0
        prob = self._n_occ / (self._n_occ + self._n_free)
        return prob > self.params.occ_threshold

    def occupied_packed(self) -> np.ndarray:
        return self._keys[self.occupied_mask()]

    def observed_packed(self) -> np.ndarray:
        return self._keys

    def world_occupied_packed(self) -> np.ndarray:
        return self.occupied_packed()

    def world_observed_packed(self) -> np.ndarray:
        return self.observed_packed()


def build_submap(
    query_pose: PoseSE3,
    scans: list[tuple[BufferEntry, np.ndarray]],
    params: BackEndParams,
    beam: RangeImageConfig | None = None,
    variant: str = VARIANT_BOTH,
) -> OccupancySubmap:
    """One-shot submap construction from query_scans output."""
    if not scans:
        raise ConfigError("build_submap requires at least one scan")
    submap = OccupancySubmap(query_pose, params, beam or RangeImageConfig(), variant)
    for entry, _pts_q in scans:
        submap.add_scan(entry)
    return submap


def merge_submaps(submaps: list[OccupancySubmap], resolution: float) -> VoxelMap:
    """Nearest-submap merge.

    A world voxel is occupied iff, among the submaps that observed it, the one
    whose origin is closest to the voxel centroid (ties: lowest index) marks it
    occupied. Submaps with no observation of a voxel have no say over it.
    """
    if not submaps:
        raise ConfigError("merge_submaps requires at least one submap")
    observed = [s.world_observed_packed() for s in submaps]
    all_keys = np.unique(np.concatenate(observed))
    if not len(all_keys):
        return VoxelMap.empty(resolution)
    cents = (unpack_keys(all_keys) + 0.5) * resolution
    origins = np.array([s.origin.translation for s in submaps])
    dists = np.linalg.norm(cents[:, None, :] - origins[None, :, :], axis=2)
    for si, obs in enumerate(observed):
        unseen = ~np.isin(all_keys, obs, assume_unique=True)
        dists[unseen, si] = np.inf
    nearest = np.argmin(dists, axis=1)  # argmin takes the lowest index on ties
    occupied_sets = [s.world_occupied_packed() for s in submaps]
    keep = np.zeros(len(all_keys), dtype=bool)
    for si in range(len(submaps)):
        mine = nearest == si
        if mine.any():
            keep[mine] = np.isin(all_keys[mine], occupied_sets[si], assume_unique=True)
    return VoxelMap(all_keys[keep], resolution)


@dataclass(frozen=True)
class GlobalStaticMap:
    """Immutable published map snapshot."""

    version: int
    merged: VoxelMap
    submap_count: int


class BackEnd:
    """Owns the submap sequence and publishes merged global maps."""

    def __init__(
        self,
        params: BackEndParams | None = None,
        beam: RangeImageConfig | None = None,
        variant: str = VARIANT_BOTH,
    ):
        self.params = params or BackEndParams()
        self.beam = beam or RangeImageConfig()
        self.variant = variant
        self.submaps: list[OccupancySubmap] = []
        self.published = GlobalStaticMap(
            version=0, merged=VoxelMap.empty(self.params.map_resolution), submap_count=0
        )
        self.last_iteration_ms = 0.0

    def _distance_from_last_origin(self, pose: PoseSE3) -> float:
        if not self.submaps:
            return float("inf")
        return float(
            np.linalg.norm(pose.translation - self.submaps[-1].origin.translation)
        )

    def iteration(
        self, buffer: StaticScanBuffer, current_pose: PoseSE3
    ) -> GlobalStaticMap:
        """Create or extend the latest submap from the buffer, then publish."""
        t0 = time.perf_counter()
        if not len(buffer):
            self.last_iteration_ms = (time.perf_counter() - t0) * 1000.0
            return self.published

        changed = False
        if self._distance_from_last_origin(current_pose) >= self.params.submap_spacing:
            nearby = query_scans(buffer, current_pose, self.params)
            if nearby:
                submap = OccupancySubmap(
                    current_pose, self.params, self.beam, self.variant
                )
                for entry, _pts in nearby:
                    submap.add_scan(entry)
                self.submaps.append(submap)
                changed = True
                # entries beyond 2*R_query can no longer join the latest submap
                buffer.prune_far(
                    current_pose.translation, 2.0 * self.params.r_query, keep_ids=set()
                )
        elif self.submaps:
            latest = self.submaps[-1]
            q = latest.origin.translation
            for entry in buffer.entries:
                if entry.scan_id not in latest.scan_ids and (
                    np.linalg.norm(entry.pose.translation - q) < self.params.r_query
                ):
                    latest.add_scan(entry)
                    changed = True

        if changed:
            merged = merge_submaps(self.submaps, self.params.map_resolution)
            self.published = GlobalStaticMap(
                version=self.published.version + 1,
                merged=merged,
                submap_count=len(self.submaps),
            )
        self.last_iteration_ms = (time.perf_counter() - t0) * 1000.0
        return self.published
