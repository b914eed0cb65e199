"""Top-level acceptance checks on the seeded corridor benchmark.

Each test prints a single PASS/FAIL line for its criterion. The heavyweight
fixture runs the full 300-scan benchmark once per mode and is shared by the
quality, ablation, and time-series criteria.
"""

import time

import numpy as np
import pytest

from smat.backend import (
    VARIANT_BOTH,
    VARIANT_OCCUPANCY_ONLY,
    BackEndParams,
    BufferEntry,
    OccupancySubmap,
)
from smat.cli import main as cli_main
from smat.frontend import kf_predict, kf_update
from smat.geometry import (
    PoseSE3,
    RangeImageConfig,
    pixel_indices,
    project_range_image,
    unpack_keys,
)
from smat.metrics import TrackRecord, hota, idf1, iou_3d, mota, score_map
from smat.nav import FrontierNode, NavGraph, ViewpointNode, aggregate_scores, select_best
from smat.pipeline import MODES, PipelineConfig, run_sequence, snapshot_metrics_over_time
from smat.raytrace import traversed_voxels
from smat.simworld import SceneConfig, generate_scene, ground_truth_maps, simulate_sequence, straight_path

from test_metrics import oracle_hota, oracle_mota, random_sequences
from test_nav import hop_distances, random_tree_graph


def report(criterion: int, ok: bool, detail: str):
    line = f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def benchmark():
    """Seeded 20x10 m corridor, 15 agents, 300 scans at 10 Hz, all five modes."""
    scene = generate_scene(SceneConfig(sensor_path=straight_path(300)))
    scans = simulate_sequence(scene)
    gt_static, gt_dynamic = ground_truth_maps(scene, scans=scans)
    runs = {}
    for mode in MODES:
        config = PipelineConfig(mode=mode, beam=scene.config.beam)
        t0 = time.perf_counter()
        rep = run_sequence(scans, config)
        elapsed = time.perf_counter() - t0
        score = score_map(rep.final_map, gt_static, gt_dynamic, 0.2)
        series = snapshot_metrics_over_time(rep, scans, gt_static, gt_dynamic)
        runs[mode] = {
            "report": rep,
            "elapsed": elapsed,
            "score": score,
            "series": series,
        }
    return {"scene": scene, "scans": scans, "gt": (gt_static, gt_dynamic), "runs": runs}


def test_criterion_1_full_pipeline_quality(benchmark):
    run = benchmark["runs"]["full"]
    s, elapsed = run["score"], run["elapsed"]
    ok = s.pr >= 90.0 and s.rr >= 95.0 and s.f1 >= 0.92 and elapsed <= 60.0
    report(
        1,
        ok,
        f"full pipeline PR {s.pr:.2f} (>=90) RR {s.rr:.2f} (>=95) "
        f"F1 {s.f1:.4f} (>=0.92) in {elapsed:.1f} s (<=60)",
    )


def test_criterion_2_ablation_ordering(benchmark):
    runs = benchmark["runs"]
    fe, be, full = (runs[m]["score"] for m in ("front_end_only", "back_end_only", "full"))
    ok = (
        fe.rr < be.rr < full.rr
        and fe.pr >= full.pr
        and full.pr >= be.pr - 5.0
    )
    report(
        2,
        ok,
        f"RR front_end_only {fe.rr:.2f} < back_end_only {be.rr:.2f} < full {full.rr:.2f}; "
        f"PR front_end_only {fe.pr:.2f} >= full {full.pr:.2f} >= back_end_only {be.pr:.2f} - 5",
    )


def test_criterion_3_backend_variant_ordering(benchmark):
    runs = benchmark["runs"]
    occ, vis, both = (
        runs[m]["score"] for m in ("occupancy_only", "visibility_only", "back_end_only")
    )
    # per-scan back-end cost on identical input, with the compiled ray
    # traversal warmed up beforehand
    scene, scans = benchmark["scene"], benchmark["scans"]
    entries = [
        BufferEntry(i, pose.apply(scan.points), pose, scan.timestamp)
        for i, (scan, pose) in enumerate(scans[:40])
    ]
    traversed_voxels(np.zeros(3), np.ones((2, 3)), 0.2)  # jit warm-up
    times = {}
    for variant in (VARIANT_BOTH, VARIANT_OCCUPANCY_ONLY):
        # best of three repetitions: timing compares algorithmic cost, so take
        # the least scheduler-perturbed measurement for each variant
        best = np.inf
        for _ in range(3):
            sub = OccupancySubmap(
                entries[0].pose, BackEndParams(), scene.config.beam, variant
            )
            t0 = time.perf_counter()
            for e in entries:
                sub.add_scan(e)
            best = min(best, (time.perf_counter() - t0) / len(entries))
        times[variant] = best
    ratio = times[VARIANT_BOTH] / times[VARIANT_OCCUPANCY_ONLY]
    ok = occ.rr >= vis.rr and both.pr >= occ.pr and ratio <= 0.25
    report(
        3,
        ok,
        f"RR occupancy_only {occ.rr:.2f} >= visibility_only {vis.rr:.2f}; "
        f"PR both {both.pr:.2f} >= occupancy_only {occ.pr:.2f}; "
        f"per-scan time ratio {ratio:.3f} (<=0.25)",
    )


def test_criterion_4_visibility_check_soundness():
    rng = np.random.default_rng(42)
    beam = RangeImageConfig()
    checked_free = 0
    ok = True
    for trial in range(1000):
        # far wall patch plus near returns in front of it: near-voxel centroids
        # that drift into wall pixels must be counted free, everything else not
        a0 = float(rng.uniform(-np.pi, np.pi))
        az = rng.uniform(a0, a0 + 0.4, 120)
        el = rng.uniform(-0.2, 0.2, 120)
        dirs = np.column_stack(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
        )
        wall_r = float(rng.uniform(8.0, 14.0))
        near = dirs[rng.random(120) < 0.2] * rng.uniform(2.0, 5.0)
        pts_local = np.vstack([dirs * wall_r, near])
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        pose = PoseSE3.from_quaternion(*q, translation=rng.uniform(-3, 3, 3))
        entry = BufferEntry(0, pose.apply(pts_local), pose, 0.0)
        gamma = float(rng.uniform(0.3, 0.95))
        params = BackEndParams(gamma=gamma)
        sub = OccupancySubmap(pose, params, beam)
        sub.add_scan(entry)
        # independent recomputation: range image and pixel lookup from the
        # generic geometry helpers, compared with zero tolerance
        inv = pose.inverse()
        img = project_range_image(inv.apply(entry.points_world), beam)
        freed = sub._keys[sub._n_free > 0]
        cents = (unpack_keys(freed) + 0.5) * params.map_resolution
        local = inv.apply(cents) if len(cents) else np.empty((0, 3))
        d = np.linalg.norm(local, axis=1)
        r, c, valid = pixel_indices(local, beam) if len(local) else (None, None, None)
        for i in range(len(freed)):
            checked_free += 1
            if not valid[i]:
                ok = False
                break
            pix = img.pixels[r[i], c[i]]
            if np.isnan(pix) or not (d[i] < gamma * pix):
                ok = False
                break
        # gamma = 0 must never free anything
        zero = OccupancySubmap(pose, BackEndParams(gamma=0.0), beam)
        zero.add_scan(entry)
        if int(zero._n_free.sum()) != 0:
            ok = False
        if not ok:
            break
    ok = ok and checked_free > 0
    report(
        4,
        ok,
        f"1000 randomized configs: {checked_free} free counts all satisfy "
        "d < gamma*I exactly; gamma=0 frees nothing",
    )


def oracle_idf1_dfs(gt, pr, alpha):
    """Exhaustive injective gt-id -> pr-id mapping maximizing IDTP."""
    gt_ids = sorted({r.track_id for r in gt})
    pr_ids = sorted({r.track_id for r in pr})
    overlap = {}
    gtf, prf = {}, {}
    for r in gt:
        gtf.setdefault(r.frame, []).append(r)
    for r in pr:
        prf.setdefault(r.frame, []).append(r)
    for f in set(gtf) & set(prf):
        for g in gtf[f]:
            for p in prf[f]:
                if iou_3d(g.box, p.box) >= alpha:
                    key = (g.track_id, p.track_id)
                    overlap[key] = overlap.get(key, 0) + 1

    best = 0

    def dfs(i, used, acc):
        nonlocal best
        if i == len(gt_ids):
            best = max(best, acc)
            return
        dfs(i + 1, used, acc)  # leave this gt id unmatched
        for p in pr_ids:
            if p not in used and (gt_ids[i], p) in overlap:
                dfs(i + 1, used | {p}, acc + overlap[(gt_ids[i], p)])

    dfs(0, frozenset(), 0)
    idtp = best
    return idtp / (idtp + 0.5 * (len(gt) - idtp) + 0.5 * (len(pr) - idtp))


def test_criterion_5_mot_metric_oracles():
    rng = np.random.default_rng(7)
    ok = True
    for gt, pr in random_sequences(rng, 50):
        alpha = 0.5
        ok &= abs(mota(gt, pr, alpha).value - oracle_mota(gt, pr, alpha)) <= 1e-9
        ok &= abs(idf1(gt, pr, alpha).value - oracle_idf1_dfs(gt, pr, alpha)) <= 1e-9
        ok &= abs(hota(gt, pr).hota - oracle_hota(gt, pr)) <= 1e-9
        if not ok:
            break

    # hand-derived cases
    def box(lo):
        from smat.geometry import BoundingBox

        lo = np.asarray(lo, dtype=float)
        return BoundingBox(lo, lo + 1.0)

    gt = [TrackRecord(f, 0, box([f, 0, 0])) for f in range(4)]
    split = [TrackRecord(f, 10, box([f, 0, 0])) for f in range(2)] + [
        TrackRecord(f, 20, box([f, 0, 0])) for f in range(2, 4)
    ]
    frag = [TrackRecord(f, 10 + f, box([f, 0, 0])) for f in range(4)]
    ok &= mota(gt, split, 0.5).value == 0.75
    ok &= idf1(gt, split, 0.5).value == 0.5
    ok &= abs(hota(gt, frag).hota - np.sqrt(1.0 / 4.0)) <= 1e-12
    report(
        5,
        ok,
        "50 random sequences match brute-force oracles to 1e-9; hand cases "
        "MOTA 0.75, IDF1 0.5, HOTA sqrt(1/F) reproduce",
    )


def test_criterion_6_self_reinforcement_series(benchmark):
    with_be = benchmark["runs"]["full"]["series"]
    without_be = benchmark["runs"]["front_end_only"]["series"]
    scans = benchmark["scans"]
    wins = total = 0
    for (scan, _pose), pr_w, pr_wo in zip(scans, with_be.frame_pr, without_be.frame_pr):
        if scan.timestamp < 3.0 or pr_w is None or pr_wo is None:
            continue
        total += 1
        if pr_w >= pr_wo:
            wins += 1
    frac = wins / total if total else 0.0
    late_rr = [
        rr
        for t, rr in zip(with_be.submap_times, with_be.submap_rr)
        if t >= 3.0 and rr is not None
    ]
    min_rr = min(late_rr) if late_rr else 0.0
    ok = frac >= 0.9 and len(late_rr) > 0 and min_rr >= 95.0
    report(
        6,
        ok,
        f"front-end PR with back end >= without for {100*frac:.1f}% of frames "
        f"after 3 s (>=90%); min submap RR after warm-up {min_rr:.2f} (>=95)",
    )


def test_criterion_7_navigation_aggregation():
    rng = np.random.default_rng(11)
    ok = True
    for _ in range(100):
        n = int(rng.integers(2, 51))
        gamma = float(rng.uniform(0.5, 0.95))
        graph = random_tree_graph(rng, n, gamma)
        iterations = aggregate_scores(graph)
        if iterations > n:
            ok = False
            break
        seeds = {}
        for f in graph.frontiers:
            seeds[f.viewpoint_id] = max(seeds.get(f.viewpoint_id, 0.0), f.score)
        for v in graph.viewpoints:
            dist = hop_distances(graph, v.node_id)
            want = max((s * gamma ** dist[src] for src, s in seeds.items()), default=0.0)
            if abs(v.score - want) > 1e-12:
                ok = False
                break
        if not ok:
            break

    # dead-end scenario: the best-scoring viewpoint has no frontier, so the
    # selected frontier must come from a viewpoint on the backtracking path
    graph = NavGraph()
    for i in range(3):
        nbrs = [j for j in (i - 1, i + 1) if 0 <= j < 3]
        graph.viewpoints.append(ViewpointNode(i, np.array([2.0 * i, 0.0]), neighbors=nbrs))
    graph.frontiers = [FrontierNode(0, np.array([2.5, 1.0]), 0.6, 1)]
    graph.viewpoints[1].frontier_ids = [0]
    aggregate_scores(graph)
    graph.viewpoints[0].score = 1.0
    vp, frontier = select_best(graph, np.array([4.0, 0.0]))
    ok = ok and vp.node_id == 0 and frontier.viewpoint_id == 1
    report(
        7,
        ok,
        "100 random trees match the closed-form fixed point to 1e-12 within "
        "|V| iterations; dead-end case backtracks to a frontier on the path",
    )


def test_criterion_8_run_determinism(tmp_path):
    cfg = tmp_path / "scene.cfg"
    cfg.write_text("agent_count = 5\nseed = 3\nn_scans = 60\n")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = cli_main(
            ["run", "--config", str(cfg), "--mode", "full", "--out-dir", str(out)]
        )
        assert rc == 0
        outs.append(out)
    same = all(
        (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
        for f in ("map.txt", "tracks.txt", "report.txt")
    )
    report(8, same, "two seeded runs produce byte-identical map, track, and report files")


def test_criterion_9_ekf_sanity():
    # noise-free constant velocity: zero measurement and process noise
    v = np.array([1.0, -0.5, 0.25])
    state, cov = np.zeros(6), np.diag([0.01] * 3 + [4.0] * 3)
    t = 0.0
    for _ in range(5):
        t += 0.1
        state, cov = kf_predict(state, cov, 0.1, 0.0)
        state, cov = kf_update(state, cov, v * t, 0.0)
    clean_err = float(np.linalg.norm(state[3:] - v))

    # sigma = 0.05 m measurement noise, 10 updates, averaged over 100 seeds
    errs = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        vv = np.array([1.5, 0.0, 0.0])
        state, cov = np.zeros(6), np.diag([0.0025] * 3 + [4.0] * 3)
        t = 0.0
        for _ in range(10):
            t += 0.1
            state, cov = kf_predict(state, cov, 0.1, 0.5)
            z = vv * t + rng.normal(0.0, 0.05, 3)
            state, cov = kf_update(state, cov, z, 0.05)
        errs.append(float(np.linalg.norm(state[3:] - vv)))
    noisy_err = float(np.mean(errs))
    ok = clean_err <= 1e-6 and noisy_err <= 0.1
    report(
        9,
        ok,
        f"noise-free velocity error {clean_err:.2e} (<=1e-6) after 5 updates; "
        f"sigma=0.05 mean error {noisy_err:.4f} m/s (<=0.1) over 100 seeds",
    )
