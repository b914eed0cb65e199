"""Static-map quality scoring (PR/RR/F1) and multi-object tracking metrics.

Map scores are voxel-set ratios against ground-truth static/dynamic maps.
The MOT suite covers MOTA (detection-weighted), IDF1 (association-weighted),
and HOTA with its DetA/AssA decomposition averaged over the 19-point IoU
threshold grid {0.05, 0.10, ..., 0.95}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BoundingBox, ConfigError, VoxelMap

ALPHA_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))


# --- static-map scoring -----------------------------------------------------


@dataclass(frozen=True)
class MapScore:
    pr: float  # percent
    rr: float | None  # percent; None when no dynamic ground truth exists
    f1: float | None
    resolution: float


def score_map(
    estimated: VoxelMap, gt_static: VoxelMap, gt_dynamic: VoxelMap, resolution: float
) -> MapScore:
    """Preservation rate over static voxels, rejection rate over dynamic voxels."""
    for m in (estimated, gt_static, gt_dynamic):
        if abs(m.resolution - resolution) > 1e-12:
            raise ConfigError(
                f"map resolution {m.resolution} does not match requested {resolution}"
            )
    if len(gt_static) == 0:
        raise ConfigError("ground-truth static map is empty")
    pr = estimated.intersection_size(gt_static) / len(gt_static) * 100.0
    if len(gt_dynamic) == 0:
        return MapScore(pr=pr, rr=None, f1=None, resolution=resolution)
    rr = (1.0 - estimated.intersection_size(gt_dynamic) / len(gt_dynamic)) * 100.0
    p, r = pr / 100.0, rr / 100.0
    f1 = 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0
    return MapScore(pr=pr, rr=rr, f1=f1, resolution=resolution)


# --- tracking records -------------------------------------------------------


@dataclass(frozen=True)
class TrackRecord:
    frame: int
    track_id: int
    box: BoundingBox


def iou_3d(a: BoundingBox, b: BoundingBox) -> float:
    """Axis-aligned volume IoU."""
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    if np.any(hi <= lo):
        return 0.0
    inter = float(np.prod(hi - lo))
    union = a.volume + b.volume - inter
    return inter / union if union > 0 else 0.0


def _by_frame(records: list[TrackRecord]) -> dict[int, list[TrackRecord]]:
    frames: dict[int, list[TrackRecord]] = {}
    for rec in records:
        frames.setdefault(rec.frame, []).append(rec)
    for recs in frames.values():
        recs.sort(key=lambda r: r.track_id)
    return frames


def match_frame(
    gt: list[TrackRecord], pr: list[TrackRecord], alpha: float
) -> tuple[list[tuple[int, int, float]], int, int]:
    """Optimal one-to-one matching for a single frame.

    Maximizes the number of pairs with IoU >= alpha, then total IoU. Returns
    (matched (gt_index, pr_index, iou) triples, FN count, FP count).
    """
    if not gt or not pr:
        return [], len(gt), len(pr)
    iou = np.array([[iou_3d(g.box, p.box) for p in pr] for g in gt])
    eligible = iou >= alpha
    # large constant ranks pair count above total IoU in the assignment
    big = iou.size + 1.0
    rows, cols = linear_sum_assignment(-(eligible * big + iou))
    pairs = [
        (int(r), int(c), float(iou[r, c]))
        for r, c in zip(rows, cols)
        if eligible[r, c]
    ]
    fn = len(gt) - len(pairs)
    fp = len(pr) - len(pairs)
    return pairs, fn, fp


# --- MOTA ---------------------------------------------------------------------


@dataclass(frozen=True)
class MotaResult:
    value: float | None  # None when there are no ground-truth detections
    tp: int
    fn: int
    fp: int
    idsw: int
    n_gt: int


def mota(gt: list[TrackRecord], pr: list[TrackRecord], alpha: float) -> MotaResult:
    gt_frames, pr_frames = _by_frame(gt), _by_frame(pr)
    frames = sorted(set(gt_frames) | set(pr_frames))
    tp = fn = fp = idsw = 0
    last_pr_id: dict[int, int] = {}  # gtID -> prID of its previous TP
    for f in frames:
        g, p = gt_frames.get(f, []), pr_frames.get(f, [])
        pairs, f_fn, f_fp = match_frame(g, p, alpha)
        tp += len(pairs)
        fn += f_fn
        fp += f_fp
        for gi, pi, _ in pairs:
            gid, pid = g[gi].track_id, p[pi].track_id
            if gid in last_pr_id and last_pr_id[gid] != pid:
                idsw += 1
            last_pr_id[gid] = pid
    n_gt = len(gt)
    value = 1.0 - (fn + fp + idsw) / n_gt if n_gt else None
    return MotaResult(value=value, tp=tp, fn=fn, fp=fp, idsw=idsw, n_gt=n_gt)


# --- IDF1 ---------------------------------------------------------------------


@dataclass(frozen=True)
class Idf1Result:
    value: float | None
    idtp: int
    idfn: int
    idfp: int


def idf1(gt: list[TrackRecord], pr: list[TrackRecord], alpha: float) -> Idf1Result:
    """Optimal trajectory-level bijection maximizing IDTP."""
    if not gt:
        return Idf1Result(value=None, idtp=0, idfn=0, idfp=len(pr))
    gt_ids = sorted({r.track_id for r in gt})
    pr_ids = sorted({r.track_id for r in pr})
    gt_frames, pr_frames = _by_frame(gt), _by_frame(pr)
    overlap = np.zeros((len(gt_ids), len(pr_ids)))
    gi_of = {g: i for i, g in enumerate(gt_ids)}
    pi_of = {p: i for i, p in enumerate(pr_ids)}
    for f in set(gt_frames) & set(pr_frames):
        for g in gt_frames[f]:
            for p in pr_frames[f]:
                if iou_3d(g.box, p.box) >= alpha:
                    overlap[gi_of[g.track_id], pi_of[p.track_id]] += 1
    idtp = 0
    if pr_ids:
        rows, cols = linear_sum_assignment(-overlap)
        idtp = int(overlap[rows, cols].sum())
    idfn = len(gt) - idtp
    idfp = len(pr) - idtp
    value = idtp / (idtp + 0.5 * idfn + 0.5 * idfp)
    return Idf1Result(value=value, idtp=idtp, idfn=idfn, idfp=idfp)


# --- HOTA ---------------------------------------------------------------------


@dataclass(frozen=True)
class HotaResult:
    hota: float
    deta: float
    assa: float
    per_alpha: dict[float, tuple[float, float, float]]  # alpha -> (hota, deta, assa)
    degenerate: bool = False


def _hota_alpha(
    gt_frames, pr_frames, frames, gt_count, pr_count, alpha
) -> tuple[float, float]:
    tp = fn = fp = 0
    pair_counts: dict[tuple[int, int], int] = {}
    tp_pairs: list[tuple[int, int]] = []
    for f in frames:
        g, p = gt_frames.get(f, []), pr_frames.get(f, [])
        pairs, f_fn, f_fp = match_frame(g, p, alpha)
        tp += len(pairs)
        fn += f_fn
        fp += f_fp
        for gi, pi, _ in pairs:
            key = (g[gi].track_id, p[pi].track_id)
            pair_counts[key] = pair_counts.get(key, 0) + 1
            tp_pairs.append(key)
    if tp + fn + fp == 0:
        return 1.0, 1.0
    deta = tp / (tp + fn + fp)
    if tp == 0:
        return deta, 0.0
    acc = 0.0
    for gid, pid in tp_pairs:
        tpa = pair_counts[(gid, pid)]
        fna = gt_count[gid] - tpa
        fpa = pr_count[pid] - tpa
        acc += tpa / (tpa + fna + fpa)
    return deta, acc / tp


def hota(gt: list[TrackRecord], pr: list[TrackRecord]) -> HotaResult:
    if not gt and not pr:
        grid = {a: (1.0, 1.0, 1.0) for a in ALPHA_GRID}
        return HotaResult(hota=1.0, deta=1.0, assa=1.0, per_alpha=grid, degenerate=True)
    gt_frames, pr_frames = _by_frame(gt), _by_frame(pr)
    frames = sorted(set(gt_frames) | set(pr_frames))
    gt_count: dict[int, int] = {}
    pr_count: dict[int, int] = {}
    for r in gt:
        gt_count[r.track_id] = gt_count.get(r.track_id, 0) + 1
    for r in pr:
        pr_count[r.track_id] = pr_count.get(r.track_id, 0) + 1
    per_alpha = {}
    for alpha in ALPHA_GRID:
        deta, assa = _hota_alpha(gt_frames, pr_frames, frames, gt_count, pr_count, alpha)
        per_alpha[alpha] = (float(np.sqrt(deta * assa)), deta, assa)
    hota_v = float(np.mean([v[0] for v in per_alpha.values()]))
    deta_v = float(np.mean([v[1] for v in per_alpha.values()]))
    assa_v = float(np.mean([v[2] for v in per_alpha.values()]))
    return HotaResult(hota=hota_v, deta=deta_v, assa=assa_v, per_alpha=per_alpha)


@dataclass(frozen=True)
class MotScore:
    """Combined MOT report: MOTA/IDF1 at a fixed threshold plus the HOTA suite."""

    mota: MotaResult
    idf1: Idf1Result
    hota: HotaResult
    alpha: float


def evaluate_tracking(
    gt: list[TrackRecord], pr: list[TrackRecord], alpha: float = 0.5
) -> MotScore:
    return MotScore(
        mota=mota(gt, pr, alpha),
        idf1=idf1(gt, pr, alpha),
        hota=hota(gt, pr),
        alpha=alpha,
    )
