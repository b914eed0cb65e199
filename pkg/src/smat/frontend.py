"""Per-scan moving-object detection and tracking.

Flow per scan: crop the published static map around the sensor, classify
points by voxel membership (background subtraction), cluster the dynamic
candidates in the world frame, greedily associate clusters with tracklets,
run the constant-velocity Kalman filter, apply the stable-tracking criteria,
and recover missed detections by forward-predicting stable tracklets.
Points belonging to clusters that are not stably tracked revert to static.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import (
    BoundingBox,
    LabeledScan,
    PoseSE3,
    ValidationError,
    VoxelMap,
    pack_keys,
    radial_2d,
    voxel_keys,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrontEndParams:
    r_bound: float = 20.0
    bs_resolution: float = 0.2
    cluster_dist: float = 0.5
    cluster_min_points: int = 5
    assoc_gate: float = 1.0
    t_val: float = 1.0
    rho_min: float = 0.7
    v_min: float = 1.0
    dv_min: float = 3.0
    miss_limit: int = 3
    meas_sigma: float = 0.1
    accel_sigma: float = 1.0


@dataclass
class HistoryRecord:
    timestamp: float
    associated: bool
    centroid: np.ndarray | None
    volume: float | None


@dataclass
class Tracklet:
    track_id: int
    state: np.ndarray  # (x, y, z, vx, vy, vz)
    cov: np.ndarray  # 6x6
    box: BoundingBox
    first_time: float
    history: list[HistoryRecord] = field(default_factory=list)
    consecutive_misses: int = 0
    stable: bool = False

    @property
    def position(self) -> np.ndarray:
        return self.state[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.state[3:]


@dataclass
class FrontEndOutput:
    static_points: np.ndarray  # world frame, includes out-of-bound pass-through
    dynamic_points: np.ndarray  # world frame
    dynamic_owner: np.ndarray  # tracklet id per dynamic point
    static_indices: np.ndarray  # indices into the input scan
    dynamic_indices: np.ndarray
    boxes: list[tuple[int, BoundingBox, np.ndarray]]  # (id, box, velocity)
    elapsed_ms: float


# --- background subtraction -------------------------------------------------


def crop_local_static_map(
    global_map: VoxelMap, pose: PoseSE3, params: FrontEndParams
) -> VoxelMap:
    """Global-map centroids within the horizontal R_bound, re-voxelized in the
    sensor frame at the subtraction resolution."""
    if len(global_map) == 0:
        return VoxelMap.empty(params.bs_resolution)
    local = pose.inverse().apply(global_map.centroids())
    keep = local[radial_2d(local) < params.r_bound]
    if not len(keep):
        return VoxelMap.empty(params.bs_resolution)
    return VoxelMap(pack_keys(voxel_keys(keep, params.bs_resolution)), params.bs_resolution)


def background_subtract(
    scan: LabeledScan, local_map: VoxelMap, params: FrontEndParams
) -> tuple[np.ndarray, np.ndarray]:
    """Index sets (static_init, dynamic_init) over in-bound scan points.

    With an empty local map (cold start) every in-bound point is dynamic.
    """
    in_bound = np.flatnonzero(radial_2d(scan.points) < params.r_bound)
    if len(local_map) == 0:
        return np.empty(0, dtype=np.int64), in_bound
    packed = pack_keys(voxel_keys(scan.points[in_bound], params.bs_resolution))
    is_static = local_map.contains_packed(packed)
    return in_bound[is_static], in_bound[~is_static]


# --- clustering -------------------------------------------------------------


def cluster_dynamic(
    points: np.ndarray, params: FrontEndParams
) -> tuple[list[tuple[BoundingBox, np.ndarray]], np.ndarray]:
    """Single-linkage Euclidean clustering.

    Returns (hypotheses, discarded): each hypothesis is (tight AABB, member
    indices); discarded holds indices of points in clusters below the size
    threshold (they revert to static).
    """
    n = len(points)
    if n == 0:
        return [], np.empty(0, dtype=np.int64)
    tree = cKDTree(points)
    pairs = tree.query_pairs(params.cluster_dist, output_type="ndarray")
    adj = coo_matrix(
        (np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])),
        shape=(n, n),
    )
    _n_comp, labels = connected_components(adj, directed=False)
    # relabel components by their lowest member index for a deterministic order
    order = np.argsort(labels, kind="stable")
    hypotheses: list[tuple[BoundingBox, np.ndarray]] = []
    discarded: list[np.ndarray] = []
    boundaries = np.flatnonzero(np.diff(labels[order])) + 1
    for members in np.split(order, boundaries):
        members = np.sort(members)
        if len(members) >= params.cluster_min_points:
            hypotheses.append((BoundingBox.of_points(points[members]), members))
        else:
            discarded.append(members)
    dropped = (
        np.concatenate(discarded) if discarded else np.empty(0, dtype=np.int64)
    )
    return hypotheses, dropped


# --- association ------------------------------------------------------------


def associate(
    centroids: np.ndarray, tracklets: list[Tracklet], params: FrontEndParams
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Greedy nearest-neighbor matching on L2 centroid distance.

    Returns (matches as (hypothesis_index, tracklet_index) pairs,
    unmatched hypothesis indices, unmatched tracklet indices). Candidates are
    taken in ascending distance with ties broken by (tracklet id, hypothesis
    index) for determinism.
    """
    n_h, n_t = len(centroids), len(tracklets)
    candidates = []
    for ti, trk in enumerate(tracklets):
        if n_h:
            dists = np.linalg.norm(centroids - trk.position, axis=1)
            for hi in np.flatnonzero(dists <= params.assoc_gate):
                candidates.append((float(dists[hi]), trk.track_id, int(hi), ti))
    candidates.sort()
    used_h, used_t = set(), set()
    matches = []
    for _dist, _tid, hi, ti in candidates:
        if hi in used_h or ti in used_t:
            continue
        matches.append((hi, ti))
        used_h.add(hi)
        used_t.add(ti)
    unmatched_h = [i for i in range(n_h) if i not in used_h]
    unmatched_t = [i for i in range(n_t) if i not in used_t]
    return matches, unmatched_h, unmatched_t


# --- constant-velocity Kalman filter ----------------------------------------

_H = np.hstack([np.eye(3), np.zeros((3, 3))])


def kf_predict(state: np.ndarray, cov: np.ndarray, dt: float, accel_sigma: float):
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    f = np.eye(6)
    f[:3, 3:] = np.eye(3) * dt
    q = np.zeros((6, 6))
    q[:3, :3] = np.eye(3) * (dt**4 / 4.0)
    q[:3, 3:] = np.eye(3) * (dt**3 / 2.0)
    q[3:, :3] = np.eye(3) * (dt**3 / 2.0)
    q[3:, 3:] = np.eye(3) * dt**2
    q *= accel_sigma**2
    return f @ state, f @ cov @ f.T + q


def kf_update(state: np.ndarray, cov: np.ndarray, z: np.ndarray, meas_sigma: float):
    r = np.eye(3) * meas_sigma**2
    s = _H @ cov @ _H.T + r
    # pinv tolerates the singular S that arises with zero noise
    k = cov @ _H.T @ np.linalg.pinv(s)
    new_state = state + k @ (z - _H @ state)
    ikh = np.eye(6) - k @ _H
    new_cov = ikh @ cov @ ikh.T + k @ r @ k.T
    new_cov = _ensure_psd(new_cov)
    return new_state, new_cov


def _ensure_psd(cov: np.ndarray) -> np.ndarray:
    cov = (cov + cov.T) / 2.0
    eigvals = np.linalg.eigvalsh(cov)
    if eigvals[0] < -1e-9:
        log.warning("clamping negative covariance eigenvalue %.3e", eigvals[0])
        w, v = np.linalg.eigh(cov)
        cov = (v * np.maximum(w, 0.0)) @ v.T
        cov = (cov + cov.T) / 2.0
    return cov


def ekf_predict(tracklet: Tracklet, dt: float, params: FrontEndParams) -> Tracklet:
    state, cov = kf_predict(tracklet.state, tracklet.cov, dt, params.accel_sigma)
    return replace(tracklet, state=state, cov=cov)


def ekf_update(tracklet: Tracklet, centroid: np.ndarray, params: FrontEndParams) -> Tracklet:
    state, cov = kf_update(tracklet.state, tracklet.cov, centroid, params.meas_sigma)
    return replace(tracklet, state=state, cov=cov)


# --- stable-tracking criteria -----------------------------------------------


def _window(tracklet: Tracklet, now: float, t_val: float) -> list[HistoryRecord]:
    cutoff = now - t_val + 1e-9
    return [rec for rec in tracklet.history if rec.timestamp >= cutoff]


def stable_check(tracklet: Tracklet, params: FrontEndParams, now: float) -> bool:
    """Association rate, average speed, and volume-change thresholds over the
    validation window. A tracklet younger than the window is never stable."""
    if now - tracklet.first_time < params.t_val - 1e-9:
        return False
    window = _window(tracklet, now, params.t_val)
    if not window:
        return False
    assoc = [rec for rec in window if rec.associated]
    rho = len(assoc) / len(window)
    if rho <= params.rho_min or not assoc:
        return False
    displacement = float(np.linalg.norm(assoc[-1].centroid - assoc[0].centroid))
    speed = displacement / (params.t_val * rho)
    if speed <= params.v_min:
        return False
    volumes = [rec.volume for rec in assoc if rec.volume is not None]
    if volumes:
        dv = max(volumes) - min(volumes)
        if dv >= params.dv_min:
            return False
    return True


# --- detection by tracking ----------------------------------------------------


def detect_by_tracking(
    tracklet: Tracklet,
    static_world: np.ndarray,
    dt: float,
    params: FrontEndParams,
) -> tuple[BoundingBox, np.ndarray] | None:
    """Predict the previous box forward by v*dt and reclaim static points in it.

    Returns (predicted box, indices into static_world) if enough points fall
    inside, else None.
    """
    predicted = tracklet.box.translated(tracklet.velocity * dt)
    if not len(static_world):
        return None
    inside = np.flatnonzero(predicted.contains(static_world))
    if len(inside) < params.cluster_min_points:
        return None
    return predicted, inside


# --- per-scan driver ----------------------------------------------------------


class FrontEnd:
    """Holds the tracklet collection and executes one scan per call."""

    def __init__(self, params: FrontEndParams | None = None):
        self.params = params or FrontEndParams()
        self.tracklets: list[Tracklet] = []
        self._next_id = 0
        self._last_time: float | None = None

    def _new_tracklet(self, centroid: np.ndarray, box: BoundingBox, now: float) -> Tracklet:
        p = self.params
        cov = np.diag([p.meas_sigma**2] * 3 + [4.0] * 3)
        trk = Tracklet(
            track_id=self._next_id,
            state=np.concatenate([centroid, np.zeros(3)]),
            cov=cov,
            box=box,
            first_time=now,
        )
        self._next_id += 1
        return trk

    def step(
        self, scan: LabeledScan, pose: PoseSE3, published_map: VoxelMap
    ) -> FrontEndOutput:
        t0 = time.perf_counter()
        p = self.params
        now = scan.timestamp
        dt = (now - self._last_time) if self._last_time is not None else 0.1
        if dt <= 0:
            dt = 0.1
        self._last_time = now

        local_map = crop_local_static_map(published_map, pose, p)
        static_idx, dynamic_idx = background_subtract(scan, local_map, p)
        out_of_bound = np.setdiff1d(
            np.arange(len(scan)), np.concatenate([static_idx, dynamic_idx]),
            assume_unique=False,
        )

        world = pose.apply(scan.points) if len(scan) else np.empty((0, 3))
        dyn_world = world[dynamic_idx]

        hypotheses, dropped = cluster_dynamic(dyn_world, p)
        static_set = np.concatenate([static_idx, out_of_bound, dynamic_idx[dropped]])

        # predict all tracklets to the current timestamp
        predicted = [ekf_predict(trk, dt, p) for trk in self.tracklets]
        was_stable = [trk.stable for trk in self.tracklets]

        centroids = (
            np.array([dyn_world[m].mean(axis=0) for _, m in hypotheses])
            if hypotheses
            else np.empty((0, 3))
        )
        matches, unmatched_h, unmatched_t = associate(centroids, predicted, p)

        dynamic_parts: list[np.ndarray] = []
        owner_parts: list[np.ndarray] = []
        static_extra: list[np.ndarray] = []

        matched_t = {ti: hi for hi, ti in matches}
        updated: list[Tracklet] = []
        for ti, trk in enumerate(predicted):
            if ti in matched_t:
                hi = matched_t[ti]
                box, members = hypotheses[hi]
                trk = ekf_update(trk, centroids[hi], p)
                trk.box = box
                trk.consecutive_misses = 0
                trk.history.append(
                    HistoryRecord(now, True, centroids[hi].copy(), box.volume)
                )
            updated.append(trk)

        # birth: every surviving unmatched cluster becomes a provisional tracklet
        for hi in unmatched_h:
            box, members = hypotheses[hi]
            trk = self._new_tracklet(centroids[hi], box, now)
            trk.history.append(HistoryRecord(now, True, centroids[hi].copy(), box.volume))
            updated.append(trk)
            matched_t[len(updated) - 1] = hi  # birth counts as this frame's owner

        hyp_owner = {hi: updated[ti].track_id for ti, hi in matched_t.items()}

        for trk in updated:
            trk.stable = stable_check(trk, p, now)

        # emit dynamic points for hypotheses owned by stable tracklets; revert others
        stable_ids = {trk.track_id for trk in updated if trk.stable}
        for hi, (box, members) in enumerate(hypotheses):
            owner = hyp_owner[hi]
            scan_indices = dynamic_idx[members]
            if owner in stable_ids:
                dynamic_parts.append(scan_indices)
                owner_parts.append(np.full(len(scan_indices), owner, dtype=np.int64))
            else:
                static_extra.append(scan_indices)

        # detection by tracking for tracklets stable last frame but unassociated now
        static_pool = np.concatenate([static_set] + static_extra)
        reclaimed_mask = np.zeros(len(static_pool), dtype=bool)
        static_pool_world = world[static_pool] if len(static_pool) else np.empty((0, 3))
        for ti in unmatched_t:
            trk = updated[ti]
            if not was_stable[ti]:
                trk.consecutive_misses += 1
                trk.history.append(HistoryRecord(now, False, None, None))
                continue
            available = np.flatnonzero(~reclaimed_mask)
            recovery = (
                detect_by_tracking(trk, static_pool_world[available], dt, p)
                if len(available)
                else None
            )
            if recovery is None:
                trk.consecutive_misses += 1
                trk.history.append(HistoryRecord(now, False, None, None))
                continue
            predicted_box, inside = recovery
            chosen = available[inside]
            reclaimed_mask[chosen] = True
            centroid = static_pool_world[chosen].mean(axis=0)
            trk2 = ekf_update(trk, centroid, p)
            trk.state, trk.cov = trk2.state, trk2.cov
            trk.box = predicted_box
            trk.consecutive_misses = 0
            trk.history.append(
                HistoryRecord(now, True, centroid.copy(), predicted_box.volume)
            )
            trk.stable = stable_check(trk, p, now)
            dynamic_parts.append(static_pool[chosen])
            owner_parts.append(np.full(len(chosen), trk.track_id, dtype=np.int64))

        final_static = static_pool[~reclaimed_mask]
        self.tracklets = [
            trk for trk in updated if trk.consecutive_misses < p.miss_limit
        ]

        dynamic_indices = (
            np.concatenate(dynamic_parts) if dynamic_parts else np.empty(0, np.int64)
        )
        owners = np.concatenate(owner_parts) if owner_parts else np.empty(0, np.int64)
        boxes = [
            (trk.track_id, trk.box, trk.velocity.copy())
            for trk in self.tracklets
            if trk.stable
        ]
        elapsed = (time.perf_counter() - t0) * 1000.0
        return FrontEndOutput(
            static_points=world[final_static],
            dynamic_points=world[dynamic_indices],
            dynamic_owner=owners,
            static_indices=np.sort(final_static),
            dynamic_indices=dynamic_indices,
            boxes=boxes,
            elapsed_ms=elapsed,
        )


def front_end_step(
    scan: LabeledScan,
    pose: PoseSE3,
    published_map: VoxelMap,
    front_end: FrontEnd,
) -> tuple[FrontEndOutput, list[Tracklet]]:
    """Functional wrapper over FrontEnd.step for callers that track state."""
    out = front_end.step(scan, pose, published_map)
    return out, front_end.tracklets
