"""Orchestration of the self-reinforcing loop and its ablation variants.

Each posed scan passes through the front end against the latest published
map; the resulting static scan is buffered for the back end, whose refreshed
map feeds the next front-end step. Ablation modes replace one side of the
loop: front-end-only stacks static scans without occupancy filtering,
back-end-only feeds raw scans to the occupancy back end, and the
visibility/occupancy-only modes swap the back end's free-space estimator.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .backend import (
    VARIANT_BOTH,
    VARIANT_OCCUPANCY_ONLY,
    VARIANT_VISIBILITY_ONLY,
    BackEnd,
    BackEndParams,
    OccupancySubmap,
    StaticScanBuffer,
)
from .frontend import FrontEnd, FrontEndParams
from .geometry import (
    ConfigError,
    LabeledScan,
    PoseSE3,
    RangeImageConfig,
    ValidationError,
    VoxelMap,
    pack_keys,
    voxel_keys,
)
from .metrics import TrackRecord

MODE_FULL = "full"
MODE_FRONT_END_ONLY = "front_end_only"
MODE_BACK_END_ONLY = "back_end_only"
MODE_VISIBILITY_ONLY = "visibility_only"
MODE_OCCUPANCY_ONLY = "occupancy_only"
MODES = (
    MODE_FULL,
    MODE_FRONT_END_ONLY,
    MODE_BACK_END_ONLY,
    MODE_VISIBILITY_ONLY,
    MODE_OCCUPANCY_ONLY,
)

_BACKEND_VARIANT = {
    MODE_BACK_END_ONLY: VARIANT_BOTH,
    MODE_VISIBILITY_ONLY: VARIANT_VISIBILITY_ONLY,
    MODE_OCCUPANCY_ONLY: VARIANT_OCCUPANCY_ONLY,
    MODE_FULL: VARIANT_BOTH,
}


@dataclass(frozen=True)
class PipelineConfig:
    front_end: FrontEndParams = field(default_factory=FrontEndParams)
    back_end: BackEndParams = field(default_factory=BackEndParams)
    mode: str = MODE_FULL
    execution: str = "interleaved"  # or "two-worker"
    beam: RangeImageConfig = field(default_factory=RangeImageConfig)
    min_buffer_scans: int = 3  # back end waits for this many static scans

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.execution not in ("interleaved", "two-worker"):
            raise ConfigError(f"unknown execution {self.execution!r}")


@dataclass
class FrameSummary:
    index: int
    timestamp: float
    n_points: int
    n_static: int
    n_dynamic: int
    map_version: int  # version read by the front end this frame
    fe_ms: float
    be_ms: float
    dynamic_indices: np.ndarray  # indices into the input scan classified dynamic


@dataclass
class RunReport:
    mode: str
    frames: list[FrameSummary]
    version_history: list[tuple[int, int, int]]  # (frame, version, voxel count)
    final_map: VoxelMap
    tracks: list[TrackRecord]
    submaps: list[tuple[int, float, OccupancySubmap]]  # (frame created, time, submap)


def _validate_stream(posed_scans: list[tuple[LabeledScan, PoseSE3]]):
    last = None
    for i, (scan, _pose) in enumerate(posed_scans):
        if last is not None and scan.timestamp <= last:
            raise ValidationError(f"scan {i} timestamp {scan.timestamp} not after {last}")
        last = scan.timestamp


class _BackendWorker:
    """Back-end worker with a per-frame handoff.

    The two-worker execution runs the back end in its own thread but forces
    the handoff to the same points as the interleaved schedule (front-end
    frame i completes before back-end iteration i starts), so seeded runs
    are reproducible across execution modes.
    """

    def __init__(self, backend: BackEnd, buffer: StaticScanBuffer):
        self.backend = backend
        self.buffer = buffer
        self._tasks: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self):
        while True:
            item = self._tasks.get()
            if item is None:
                self._tasks.task_done()
                return
            pose = item
            self.backend.iteration(self.buffer, pose)
            self._tasks.task_done()

    def run_iteration(self, pose: PoseSE3):
        self._tasks.put(pose)
        self._tasks.join()

    def close(self):
        self._tasks.put(None)
        self._tasks.join()
        self._thread.join()


def run_sequence(
    posed_scans: list[tuple[LabeledScan, PoseSE3]], config: PipelineConfig
) -> RunReport:
    """Drive the configured pipeline over a timestamp-ordered scan stream."""
    _validate_stream(posed_scans)
    frames: list[FrameSummary] = []
    version_history: list[tuple[int, int, int]] = []
    tracks: list[TrackRecord] = []

    if config.mode == MODE_FRONT_END_ONLY:
        return _run_front_end_only(posed_scans, config)

    use_front_end = config.mode == MODE_FULL
    fe = FrontEnd(config.front_end) if use_front_end else None
    backend = BackEnd(config.back_end, config.beam, _BACKEND_VARIANT[config.mode])
    buffer = StaticScanBuffer()
    worker = (
        _BackendWorker(backend, buffer) if config.execution == "two-worker" else None
    )
    submap_birth: dict[int, tuple[int, float]] = {}
    appended = 0
    try:
        for i, (scan, pose) in enumerate(posed_scans):
            published = backend.published
            fe_ms = 0.0
            if use_front_end:
                out = fe.step(scan, pose, published.merged)
                fe_ms = out.elapsed_ms
                static_world = out.static_points
                dyn_idx = out.dynamic_indices
                for tid, box, _vel in out.boxes:
                    tracks.append(TrackRecord(frame=i, track_id=tid, box=box))
            else:
                static_world = pose.apply(scan.points) if len(scan) else np.empty((0, 3))
                dyn_idx = np.empty(0, dtype=np.int64)

            buffer.append(static_world, pose, scan.timestamp)
            appended += 1

            be_t0 = time.perf_counter()
            if appended >= config.min_buffer_scans:
                n_before = len(backend.submaps)
                if worker is not None:
                    worker.run_iteration(pose)
                else:
                    backend.iteration(buffer, pose)
                for si in range(n_before, len(backend.submaps)):
                    submap_birth[si] = (i, scan.timestamp)
            be_ms = (time.perf_counter() - be_t0) * 1000.0

            if not version_history or backend.published.version != version_history[-1][1]:
                version_history.append(
                    (i, backend.published.version, len(backend.published.merged))
                )
            frames.append(
                FrameSummary(
                    index=i,
                    timestamp=scan.timestamp,
                    n_points=len(scan),
                    n_static=len(scan) - len(dyn_idx),
                    n_dynamic=len(dyn_idx),
                    map_version=published.version,
                    fe_ms=fe_ms,
                    be_ms=be_ms,
                    dynamic_indices=dyn_idx,
                )
            )
    finally:
        if worker is not None:
            worker.close()

    submaps = [
        (submap_birth[si][0], submap_birth[si][1], sm)
        for si, sm in enumerate(backend.submaps)
    ]
    return RunReport(
        mode=config.mode,
        frames=frames,
        version_history=version_history,
        final_map=backend.published.merged,
        tracks=tracks,
        submaps=submaps,
    )


def _run_front_end_only(
    posed_scans: list[tuple[LabeledScan, PoseSE3]], config: PipelineConfig
) -> RunReport:
    """Stack front-end static scans straight into the map, no occupancy filter."""
    fe = FrontEnd(config.front_end)
    res = config.back_end.map_resolution
    accumulated = np.empty(0, dtype=np.int64)
    frames: list[FrameSummary] = []
    version_history: list[tuple[int, int, int]] = []
    tracks: list[TrackRecord] = []
    version = 0
    for i, (scan, pose) in enumerate(posed_scans):
        stacked = VoxelMap(accumulated, res)
        out = fe.step(scan, pose, stacked)
        for tid, box, _vel in out.boxes:
            tracks.append(TrackRecord(frame=i, track_id=tid, box=box))
        if len(out.static_points):
            new = pack_keys(voxel_keys(out.static_points, res))
            before = len(accumulated)
            accumulated = np.unique(np.concatenate([accumulated, new]))
            if len(accumulated) != before:
                version += 1
                version_history.append((i, version, len(accumulated)))
        frames.append(
            FrameSummary(
                index=i,
                timestamp=scan.timestamp,
                n_points=len(scan),
                n_static=len(scan) - len(out.dynamic_indices),
                n_dynamic=len(out.dynamic_indices),
                map_version=version,
                fe_ms=out.elapsed_ms,
                be_ms=0.0,
                dynamic_indices=out.dynamic_indices,
            )
        )
    return RunReport(
        mode=config.mode,
        frames=frames,
        version_history=version_history,
        final_map=VoxelMap(accumulated, res),
        tracks=tracks,
        submaps=[],
    )


# --- time-series metrics ------------------------------------------------------


@dataclass(frozen=True)
class MetricSeries:
    frame_pr: list[float | None]  # per-frame front-end static-scan PR (percent)
    frame_rr: list[float | None]
    submap_times: list[float]
    submap_pr: list[float | None]  # per-submap back-end PR within the 6 m radius
    submap_rr: list[float | None]
    available: bool = True


def snapshot_metrics_over_time(
    report: RunReport,
    posed_scans: list[tuple[LabeledScan, PoseSE3]],
    gt_static: VoxelMap,
    gt_dynamic: VoxelMap,
    submap_radius: float = 6.0,
) -> MetricSeries:
    """Front-end PR/RR per frame and back-end PR/RR per submap near its origin."""
    if any(scan.labels is None for scan, _ in posed_scans):
        return MetricSeries([], [], [], [], [], available=False)

    frame_pr: list[float | None] = []
    frame_rr: list[float | None] = []
    for summary, (scan, _pose) in zip(report.frames, posed_scans):
        labels = scan.labels
        classified_dyn = np.zeros(len(scan), dtype=bool)
        classified_dyn[summary.dynamic_indices] = True
        n_static_gt = int((~labels).sum())
        n_dynamic_gt = int(labels.sum())
        pr = (
            float((~labels & ~classified_dyn).sum()) / n_static_gt * 100.0
            if n_static_gt
            else None
        )
        rr = (
            (1.0 - float((labels & ~classified_dyn).sum()) / n_dynamic_gt) * 100.0
            if n_dynamic_gt
            else None
        )
        frame_pr.append(pr)
        frame_rr.append(rr)

    res = gt_static.resolution
    submap_times: list[float] = []
    submap_pr: list[float | None] = []
    submap_rr: list[float | None] = []
    for _frame, t, submap in report.submaps:
        origin = submap.origin.translation
        occ = _restrict(submap.world_occupied_packed(), origin, submap_radius, res)
        gts = _restrict(gt_static.packed, origin, submap_radius, res)
        gtd = _restrict(gt_dynamic.packed, origin, submap_radius, res)
        submap_times.append(t)
        submap_pr.append(
            float(np.isin(occ, gts, assume_unique=True).sum()) / len(gts) * 100.0
            if len(gts)
            else None
        )
        submap_rr.append(
            (1.0 - float(np.isin(occ, gtd, assume_unique=True).sum()) / len(gtd)) * 100.0
            if len(gtd)
            else None
        )
    return MetricSeries(frame_pr, frame_rr, submap_times, submap_pr, submap_rr)


def _restrict(packed: np.ndarray, origin: np.ndarray, radius: float, res: float):
    from .geometry import unpack_keys

    if not len(packed):
        return packed
    cents = (unpack_keys(packed) + 0.5) * res
    return packed[np.linalg.norm(cents - origin, axis=1) <= radius]
