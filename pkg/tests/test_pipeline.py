"""Pipeline orchestration: modes, scheduling, causality, metric series."""

import numpy as np
import pytest

from smat.geometry import LabeledScan, PoseSE3, ValidationError, VoxelMap, ConfigError
from smat.metrics import score_map
from smat.pipeline import (
    MODE_BACK_END_ONLY,
    MODE_FRONT_END_ONLY,
    MODE_FULL,
    MODE_OCCUPANCY_ONLY,
    MODE_VISIBILITY_ONLY,
    MODES,
    FrameSummary,
    PipelineConfig,
    RunReport,
    run_sequence,
    snapshot_metrics_over_time,
)
from smat.simworld import (
    SceneConfig,
    generate_scene,
    ground_truth_maps,
    simulate_sequence,
    straight_path,
)


@pytest.fixture(scope="module")
def pipe_scene():
    config = SceneConfig(agent_count=3, seed=5, sensor_path=straight_path(40))
    return generate_scene(config)


@pytest.fixture(scope="module")
def pipe_scans(pipe_scene):
    return simulate_sequence(pipe_scene)


def config_for(scene, mode=MODE_FULL, execution="interleaved"):
    return PipelineConfig(mode=mode, execution=execution, beam=scene.config.beam)


# --- configuration and stream validation ------------------------------------------


def test_config_rejects_unknown_mode_and_execution():
    with pytest.raises(ConfigError):
        PipelineConfig(mode="bogus")
    with pytest.raises(ConfigError):
        PipelineConfig(execution="parallel")


def test_empty_stream_yields_empty_report():
    for mode in MODES:
        report = run_sequence([], PipelineConfig(mode=mode))
        assert report.frames == [] and report.tracks == []
        assert len(report.final_map) == 0


def test_out_of_order_timestamps_rejected():
    scans = [
        (LabeledScan(points=np.empty((0, 3)), labels=None, timestamp=t), PoseSE3.identity())
        for t in (1.0, 0.5)
    ]
    with pytest.raises(ValidationError, match="scan 1"):
        run_sequence(scans, PipelineConfig())


# --- full mode behaviour -------------------------------------------------------------


def test_full_mode_is_deterministic(pipe_scene, pipe_scans):
    reports = [run_sequence(pipe_scans, config_for(pipe_scene)) for _ in range(2)]
    a, b = reports
    assert a.final_map == b.final_map
    assert [(f.n_static, f.n_dynamic, f.map_version) for f in a.frames] == [
        (f.n_static, f.n_dynamic, f.map_version) for f in b.frames
    ]
    assert [(r.frame, r.track_id) for r in a.tracks] == [
        (r.frame, r.track_id) for r in b.tracks
    ]


def test_two_worker_matches_interleaved(pipe_scene, pipe_scans):
    inter = run_sequence(pipe_scans, config_for(pipe_scene))
    twow = run_sequence(pipe_scans, config_for(pipe_scene, execution="two-worker"))
    assert inter.final_map == twow.final_map
    assert inter.version_history == twow.version_history
    assert [f.map_version for f in inter.frames] == [f.map_version for f in twow.frames]


def test_map_versions_are_causal(pipe_scene, pipe_scans):
    report = run_sequence(pipe_scans, config_for(pipe_scene))
    versions = [f.map_version for f in report.frames]
    assert versions == sorted(versions)
    # frame i reads exactly the version published by the end of frame i-1
    for i, f in enumerate(report.frames):
        expected = max(
            (v for fr, v, _n in report.version_history if fr < i), default=0
        )
        assert f.map_version == expected
    history_frames = [fr for fr, _v, _n in report.version_history]
    assert history_frames == sorted(history_frames)


def test_full_mode_on_static_scene_preserves_map(static_scene, static_scans):
    gt_static, gt_dynamic = ground_truth_maps(static_scene, scans=static_scans)
    report = run_sequence(static_scans, config_for(static_scene))
    score = score_map(report.final_map, gt_static, gt_dynamic, 0.2)
    assert score.pr >= 99.0
    assert score.rr is None  # no dynamic ground truth in an agentless scene
    assert report.tracks == []


# --- ablation modes --------------------------------------------------------------------


def test_front_end_only_stacks_everything(pipe_scene, pipe_scans):
    report = run_sequence(pipe_scans, config_for(pipe_scene, MODE_FRONT_END_ONLY))
    assert report.mode == MODE_FRONT_END_ONLY
    assert report.submaps == []
    # no occupancy filter: the stacked map contains every static voxel seen
    counts = [n for _f, _v, n in report.version_history]
    assert counts == sorted(counts)
    assert len(report.final_map) == counts[-1]


def test_back_end_only_ignores_labels(pipe_scene, pipe_scans):
    report = run_sequence(pipe_scans, config_for(pipe_scene, MODE_BACK_END_ONLY))
    assert all(f.n_dynamic == 0 for f in report.frames)
    assert report.tracks == []
    assert len(report.submaps) > 0


def test_variant_modes_order_free_space_aggressiveness(static_scene, static_scans):
    """Visibility-only discards more than the probabilistic filter, which in
    turn discards more than pure ray traversal keeps out."""
    maps = {}
    for mode in (MODE_BACK_END_ONLY, MODE_VISIBILITY_ONLY, MODE_OCCUPANCY_ONLY):
        report = run_sequence(static_scans[:15], config_for(static_scene, mode))
        maps[mode] = report.final_map
    assert len(maps[MODE_VISIBILITY_ONLY]) <= len(maps[MODE_BACK_END_ONLY])


# --- metric series ------------------------------------------------------------------------


def fake_report(posed_scans, dyn_fn):
    frames = [
        FrameSummary(
            index=i,
            timestamp=scan.timestamp,
            n_points=len(scan),
            n_static=len(scan) - len(dyn_fn(scan)),
            n_dynamic=len(dyn_fn(scan)),
            map_version=0,
            fe_ms=0.0,
            be_ms=0.0,
            dynamic_indices=dyn_fn(scan),
        )
        for i, (scan, _pose) in enumerate(posed_scans)
    ]
    return RunReport(
        mode=MODE_FULL,
        frames=frames,
        version_history=[],
        final_map=VoxelMap.empty(0.2),
        tracks=[],
        submaps=[],
    )


def test_metric_series_perfect_classification(pipe_scene, pipe_scans):
    gt_static, gt_dynamic = ground_truth_maps(pipe_scene, scans=pipe_scans)
    report = fake_report(pipe_scans, lambda scan: np.flatnonzero(scan.labels))
    series = snapshot_metrics_over_time(report, pipe_scans, gt_static, gt_dynamic)
    assert series.available
    assert all(pr is None or pr == 100.0 for pr in series.frame_pr)
    assert all(rr is None or rr == 100.0 for rr in series.frame_rr)


def test_metric_series_all_static_classification(pipe_scene, pipe_scans):
    gt_static, gt_dynamic = ground_truth_maps(pipe_scene, scans=pipe_scans)
    report = fake_report(pipe_scans, lambda scan: np.empty(0, dtype=np.int64))
    series = snapshot_metrics_over_time(report, pipe_scans, gt_static, gt_dynamic)
    assert all(pr is None or pr == 100.0 for pr in series.frame_pr)
    assert all(rr is None or rr == 0.0 for rr in series.frame_rr)
    assert any(rr == 0.0 for rr in series.frame_rr)


def test_metric_series_unavailable_without_labels(pipe_scene, pipe_scans):
    unlabeled = [
        (LabeledScan(points=s.points, labels=None, timestamp=s.timestamp), p)
        for s, p in pipe_scans[:3]
    ]
    report = fake_report(unlabeled, lambda scan: np.empty(0, dtype=np.int64))
    gt_static, gt_dynamic = ground_truth_maps(pipe_scene, scans=pipe_scans)
    series = snapshot_metrics_over_time(report, unlabeled, gt_static, gt_dynamic)
    assert not series.available
    assert series.frame_pr == [] and series.submap_pr == []
