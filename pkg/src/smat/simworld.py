"""Synthetic urban-corridor world and LiDAR simulator.

A rectangular corridor (ground plane + wall boxes) populated with box-shaped
agents that ping-pong along the corridor axis at constant speed. One ray is
cast per range-image pixel; the first hit against ground, walls, or agent
boxes yields a labeled point. Everything is a deterministic function of
(config, t), so seeded runs reproduce bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BoundingBox,
    ConfigError,
    LabeledScan,
    PoseSE3,
    RangeImageConfig,
    VoxelMap,
    pack_keys,
    ray_directions,
    voxel_keys,
)

_PLACEMENT_ATTEMPTS = 200

# Agents return points from torso height upward: at this scale, leg returns
# are too sparse to show up, so the agent box floats above the ground plane.
AGENT_CLEARANCE = 0.55


@dataclass(frozen=True)
class SceneConfig:
    length: float = 20.0
    width: float = 10.0
    wall_height: float = 2.5
    agent_count: int = 15
    speed_range: tuple[float, float] = (1.2, 1.8)
    agent_size: tuple[float, float, float] = (0.5, 0.5, 1.8)
    sensor_path: tuple[tuple[float, PoseSE3], ...] = ()
    # 0.5 deg vertical spacing biased downward: dense enough that ground voxels
    # at 0.2 m resolution are sampled contiguously out to ~5 m
    beam: RangeImageConfig = field(
        default_factory=lambda: RangeImageConfig(
            rows=48, cols=360, fov_v=(math.radians(-16.0), math.radians(8.0))
        )
    )
    seed: int = 0
    max_range: float = 50.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0 or self.wall_height <= 0:
            raise ConfigError("corridor extents must be positive")
        if self.agent_count < 0:
            raise ConfigError("agent_count must be >= 0")
        if self.speed_range[0] <= 0 or self.speed_range[1] < self.speed_range[0]:
            raise ConfigError("speed range must be positive and ordered")


def straight_path(
    n_scans: int,
    x_start: float = 2.0,
    x_end: float = 18.0,
    y: float = 0.0,
    z: float = 2.0,
    rate_hz: float = 10.0,
) -> tuple[tuple[float, PoseSE3], ...]:
    """Straight sensor path along the corridor axis at a fixed scan rate."""
    xs = np.linspace(x_start, x_end, n_scans)
    return tuple(
        (i / rate_hz, PoseSE3(np.eye(3), np.array([x, y, z])))
        for i, x in enumerate(xs)
    )


@dataclass(frozen=True)
class AgentTrack:
    """Box agent ping-ponging between x0 and x1 at constant speed."""

    size: tuple[float, float, float]
    y: float
    x0: float
    x1: float
    speed: float
    start_offset: float  # position on the 2L loop at t=0

    def center_x(self, t: float) -> float:
        span = self.x1 - self.x0
        p = (self.start_offset + self.speed * t) % (2.0 * span)
        return self.x0 + (p if p <= span else 2.0 * span - p)

    def box_at(self, t: float) -> BoundingBox:
        w, d, h = self.size
        cx = self.center_x(t)
        lo = np.array([cx - w / 2.0, self.y - d / 2.0, AGENT_CLEARANCE])
        hi = np.array([cx + w / 2.0, self.y + d / 2.0, AGENT_CLEARANCE + h])
        return BoundingBox(lo, hi)


@dataclass(frozen=True)
class Scene:
    config: SceneConfig
    walls: tuple[BoundingBox, ...]
    agents: tuple[AgentTrack, ...]


def _boxes_overlap(a: BoundingBox, b: BoundingBox) -> bool:
    return bool(np.all(a.lo < b.hi) and np.all(b.lo < a.hi))


def generate_scene(config: SceneConfig) -> Scene:
    """Deterministic scene for a given seed; raises if agents cannot be placed."""
    length, width, wh = config.length, config.width, config.wall_height
    half = width / 2.0
    thick = 0.3
    walls = (
        BoundingBox([0.0, half, 0.0], [length, half + thick, wh]),
        BoundingBox([0.0, -half - thick, 0.0], [length, -half, wh]),
        BoundingBox([-thick, -half - thick, 0.0], [0.0, half + thick, wh]),
        BoundingBox([length, -half - thick, 0.0], [length + thick, half + thick, wh]),
    )

    rng = np.random.default_rng(config.seed)
    w, d, _ = config.agent_size
    margin = max(w, d) / 2.0 + 0.2
    agents: list[AgentTrack] = []
    for _ in range(config.agent_count):
        placed = False
        for _attempt in range(_PLACEMENT_ATTEMPTS):
            x = float(rng.uniform(margin, length - margin))
            y = float(rng.uniform(-half + margin, half - margin))
            speed = float(rng.uniform(*config.speed_range))
            direction = 1 if rng.random() < 0.5 else -1
            span = length - 2.0 * margin
            offset = (x - margin) if direction > 0 else 2.0 * span - (x - margin)
            cand = AgentTrack(config.agent_size, y, margin, length - margin, speed, offset)
            if all(not _boxes_overlap(cand.box_at(0.0), a.box_at(0.0)) for a in agents):
                agents.append(cand)
                placed = True
                break
        if not placed:
            raise ConfigError(
                f"could not place {config.agent_count} non-overlapping agents "
                f"in a {length} x {width} corridor"
            )
    return Scene(config, walls, tuple(agents))


def _ray_box_hits(origin: np.ndarray, dirs: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Entry distance of each ray into the box (inf when missed). Slab method."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (box.lo - origin) * inv
        t1 = (box.hi - origin) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    hit = (tmax >= tmin) & (tmax > 0)
    entry = np.where(tmin > 0, tmin, tmax)  # origin inside box: exit distance
    return np.where(hit, entry, np.inf)


def simulate_scan(scene: Scene, sensor_pose: PoseSE3, t: float) -> LabeledScan:
    """Cast one ray per beam pixel and return the sensor-frame labeled scan."""
    cfg = scene.config
    dirs_s = ray_directions(cfg.beam)
    dirs_w = dirs_s @ sensor_pose.rotation.T
    origin = sensor_pose.translation

    best = np.full(len(dirs_w), np.inf)
    dynamic = np.zeros(len(dirs_w), dtype=bool)

    # ground plane z = 0, hit from above only
    dz = dirs_w[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = -origin[2] / dz
    ground = (dz < 0) & (tg > 0)
    best = np.where(ground & (tg < best), tg, best)

    for wall in scene.walls:
        tw = _ray_box_hits(origin, dirs_w, wall)
        closer = tw < best
        best = np.where(closer, tw, best)
        dynamic[closer] = False

    for agent in scene.agents:
        ta = _ray_box_hits(origin, dirs_w, agent.box_at(t))
        closer = ta < best
        best = np.where(closer, ta, best)
        dynamic[closer] = True

    if cfg.noise_sigma > 0:
        rng = np.random.default_rng([cfg.seed, int(round(t * 1e6)) & 0x7FFFFFFF])
        noise = rng.normal(0.0, cfg.noise_sigma, size=len(best))
        best = np.where(np.isfinite(best), np.maximum(best + noise, 1e-6), best)

    hit = np.isfinite(best) & (best <= cfg.max_range)
    points = dirs_s[hit] * best[hit, None]
    return LabeledScan(points=points, labels=dynamic[hit], timestamp=float(t))


def simulate_sequence(scene: Scene) -> list[tuple[LabeledScan, PoseSE3]]:
    """Simulate every scan along the configured sensor path."""
    return [
        (simulate_scan(scene, pose, t), pose) for t, pose in scene.config.sensor_path
    ]


def ground_truth_maps(
    scene: Scene,
    sensor_path=None,
    resolution: float = 0.2,
    scans: list[tuple[LabeledScan, PoseSE3]] | None = None,
) -> tuple[VoxelMap, VoxelMap]:
    """Accumulate labeled scans in the world frame into static/dynamic voxel maps.

    Static map: voxels with >= 1 static point. Dynamic map: voxels with >= 1
    dynamic point and no static point. Pass precomputed scans to avoid a
    second simulation pass.
    """
    if scans is None:
        path = sensor_path if sensor_path is not None else scene.config.sensor_path
        scans = [(simulate_scan(scene, pose, t), pose) for t, pose in path]
    static_parts, dynamic_parts = [], []
    for scan, pose in scans:
        if not len(scan):
            continue
        world = pose.apply(scan.points)
        packed = pack_keys(voxel_keys(world, resolution))
        static_parts.append(packed[~scan.labels])
        dynamic_parts.append(packed[scan.labels])
    static_packed = (
        np.unique(np.concatenate(static_parts)) if static_parts else np.empty(0, np.int64)
    )
    dynamic_packed = (
        np.unique(np.concatenate(dynamic_parts)) if dynamic_parts else np.empty(0, np.int64)
    )
    dynamic_only = dynamic_packed[
        ~np.isin(dynamic_packed, static_packed, assume_unique=True)
    ]
    return VoxelMap(static_packed, resolution), VoxelMap(dynamic_only, resolution)


def dynamic_point_fraction(scans: list[tuple[LabeledScan, PoseSE3]]) -> float:
    """Fraction of all simulated points carrying the dynamic label."""
    total = sum(len(s) for s, _ in scans)
    if total == 0:
        return 0.0
    dyn = sum(int(s.labels.sum()) for s, _ in scans)
    return dyn / total
