"""Long-range direction selection: terrain costs, frontiers, navigation graph.

The terrain grid bins points into 2D cells; a cell's reference height is the
nearest-rank lower quartile of its point heights and per-point costs are
height differences against it. Frontier cells are known traversable cells
bordering unknown space. Viewpoint nodes sampled along the robot's path carry
priority scores seeded from frontier directions and spread by discounted
max-aggregation; selection returns the nearest top-scoring viewpoint and its
best frontier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ConfigError


class ExplorationExhausted(Exception):
    """No frontier is reachable anywhere in the graph."""


# --- terrain grid -------------------------------------------------------------


@dataclass(frozen=True)
class TerrainGrid:
    cell_size: float
    i0: int  # cell index offset (x)
    j0: int  # cell index offset (y)
    known: np.ndarray  # 2D bool
    traversable: np.ndarray  # 2D bool, only meaningful where known
    ref_height: np.ndarray  # 2D float, NaN where unknown
    max_cost: np.ndarray  # 2D float, NaN where unknown

    @property
    def shape(self) -> tuple[int, int]:
        return self.known.shape

    def cell_center(self, i: int, j: int) -> np.ndarray:
        return np.array(
            [
                (self.i0 + i + 0.5) * self.cell_size,
                (self.j0 + j + 0.5) * self.cell_size,
            ]
        )


def lower_quartile(values: np.ndarray) -> float:
    """Nearest-rank 25th percentile: smallest value covering 25% of the sample."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    rank = max(int(math.ceil(0.25 * len(v))), 1)
    return float(v[rank - 1])


def terrain_cost(
    points: np.ndarray, cell_size: float, obstacle_threshold: float = 0.3
) -> TerrainGrid:
    """Bin points into 2D cells and score traversability by height spread."""
    if cell_size <= 0:
        raise ConfigError(f"cell_size must be positive, got {cell_size}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not len(pts):
        raise ConfigError("terrain_cost requires at least one point")
    ci = np.floor(pts[:, 0] / cell_size).astype(np.int64)
    cj = np.floor(pts[:, 1] / cell_size).astype(np.int64)
    i0, j0 = int(ci.min()), int(cj.min())
    ni, nj = int(ci.max()) - i0 + 1, int(cj.max()) - j0 + 1
    known = np.zeros((ni, nj), dtype=bool)
    traversable = np.zeros((ni, nj), dtype=bool)
    ref = np.full((ni, nj), np.nan)
    max_cost = np.full((ni, nj), np.nan)
    order = np.lexsort((cj, ci))
    ci_s, cj_s, z_s = ci[order], cj[order], pts[order, 2]
    boundaries = np.flatnonzero(np.diff(ci_s) | np.diff(cj_s)) + 1
    for lo, hi in zip(
        np.concatenate([[0], boundaries]), np.concatenate([boundaries, [len(ci_s)]])
    ):
        i, j = int(ci_s[lo]) - i0, int(cj_s[lo]) - j0
        heights = z_s[lo:hi]
        r = lower_quartile(heights)
        costs = heights - r
        known[i, j] = True
        ref[i, j] = r
        max_cost[i, j] = float(costs.max())
        traversable[i, j] = costs.max() < obstacle_threshold
    return TerrainGrid(cell_size, i0, j0, known, traversable, ref, max_cost)


@dataclass(frozen=True)
class FrontierCluster:
    cells: tuple[tuple[int, int], ...]  # grid indices
    centroid: np.ndarray  # 2D world coordinates


def extract_frontiers(grid: TerrainGrid) -> list[FrontierCluster]:
    """Known traversable cells 4-adjacent to unknown cells, clustered 8-adjacent."""
    ni, nj = grid.shape
    unknown = ~grid.known
    frontier = np.zeros((ni, nj), dtype=bool)
    cand = grid.known & grid.traversable
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        shifted = np.zeros((ni, nj), dtype=bool)
        src = unknown[
            max(di, 0) : ni + min(di, 0), max(dj, 0) : nj + min(dj, 0)
        ]
        shifted[max(-di, 0) : ni + min(-di, 0), max(-dj, 0) : nj + min(-dj, 0)] = src
        frontier |= cand & shifted
    clusters: list[FrontierCluster] = []
    seen = np.zeros((ni, nj), dtype=bool)
    for i in range(ni):
        for j in range(nj):
            if not frontier[i, j] or seen[i, j]:
                continue
            stack = [(i, j)]
            seen[i, j] = True
            cells = []
            while stack:
                ci, cj = stack.pop()
                cells.append((ci, cj))
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        ni2, nj2 = ci + di, cj + dj
                        if (
                            0 <= ni2 < ni
                            and 0 <= nj2 < nj
                            and frontier[ni2, nj2]
                            and not seen[ni2, nj2]
                        ):
                            seen[ni2, nj2] = True
                            stack.append((ni2, nj2))
            cells.sort()
            centroid = np.mean([grid.cell_center(ci, cj) for ci, cj in cells], axis=0)
            clusters.append(FrontierCluster(tuple(cells), centroid))
    clusters.sort(key=lambda c: c.cells[0])
    return clusters


# --- navigation graph ----------------------------------------------------------


@dataclass
class ViewpointNode:
    node_id: int
    position: np.ndarray  # 2D
    score: float = 0.0
    neighbors: list[int] = field(default_factory=list)  # viewpoint node ids
    frontier_ids: list[int] = field(default_factory=list)


@dataclass
class FrontierNode:
    node_id: int
    position: np.ndarray  # 2D
    score: float
    viewpoint_id: int


@dataclass
class NavGraph:
    spacing: float = 2.0
    gamma_nav: float = 0.9
    viewpoints: list[ViewpointNode] = field(default_factory=list)
    frontiers: list[FrontierNode] = field(default_factory=list)
    last_sample: np.ndarray | None = None

    def __post_init__(self):
        if not (0.0 < self.gamma_nav < 1.0):
            raise ConfigError(f"gamma_nav must be in (0, 1), got {self.gamma_nav}")


def score_frontier(
    viewpoint_pos: np.ndarray, frontier_pos: np.ndarray, reference_direction: np.ndarray
) -> float:
    """(1 + cos angle between driving and reference direction) / 2."""
    ref = np.asarray(reference_direction, dtype=np.float64)
    norm = np.linalg.norm(ref)
    if norm == 0:
        raise ConfigError("reference direction must be non-zero")
    ref = ref / norm
    driving = np.asarray(frontier_pos, dtype=np.float64) - np.asarray(
        viewpoint_pos, dtype=np.float64
    )
    dn = np.linalg.norm(driving)
    if dn == 0:
        raise ConfigError("frontier coincides with its viewpoint")
    driving = driving / dn
    return float((1.0 + driving @ ref) / 2.0)


def extend_graph(
    graph: NavGraph,
    robot_position: np.ndarray,
    frontier_clusters: list[FrontierCluster],
    reference_direction: np.ndarray,
) -> NavGraph:
    """Sample a viewpoint when far enough from the last one; rebuild frontiers."""
    pos = np.asarray(robot_position, dtype=np.float64)[:2]
    if graph.last_sample is None or np.linalg.norm(pos - graph.last_sample) >= graph.spacing:
        node = ViewpointNode(node_id=len(graph.viewpoints), position=pos.copy())
        if graph.viewpoints:
            dists = [np.linalg.norm(pos - v.position) for v in graph.viewpoints]
            nearest = int(np.argmin(dists))
            node.neighbors.append(nearest)
            graph.viewpoints[nearest].neighbors.append(node.node_id)
        graph.viewpoints.append(node)
        graph.last_sample = pos.copy()

    # frontier nodes are rebuilt every cycle
    graph.frontiers = []
    for v in graph.viewpoints:
        v.frontier_ids = []
    for fid, cluster in enumerate(frontier_clusters):
        if not graph.viewpoints:
            break
        dists = [np.linalg.norm(cluster.centroid - v.position) for v in graph.viewpoints]
        nearest = int(np.argmin(dists))
        vp = graph.viewpoints[nearest]
        score = score_frontier(vp.position, cluster.centroid, reference_direction)
        graph.frontiers.append(
            FrontierNode(fid, cluster.centroid.copy(), score, vp.node_id)
        )
        vp.frontier_ids.append(fid)
    return graph


def aggregate_scores(graph: NavGraph) -> int:
    """Initialize viewpoint scores from frontier neighbors, then spread by
    discounted max-aggregation to a fixed point. Returns the iteration count."""
    for v in graph.viewpoints:
        v.score = max(
            (graph.frontiers[f].score for f in v.frontier_ids), default=0.0
        )
    iterations = 0
    changed = True
    while changed:
        changed = False
        iterations += 1
        updates = {}
        for v in graph.viewpoints:
            if not v.neighbors:
                continue
            best = max(graph.viewpoints[n].score for n in v.neighbors)
            new = max(v.score, graph.gamma_nav * best)
            if new > v.score:
                updates[v.node_id] = new
        for nid, val in updates.items():
            graph.viewpoints[nid].score = val
            changed = True
    return iterations


def _path_between(graph: NavGraph, start: int, goal: int) -> list[int]:
    """BFS path along viewpoint edges (graph is a tree by construction)."""
    if start == goal:
        return [start]
    prev = {start: None}
    fringe = [start]
    while fringe:
        nxt = []
        for nid in fringe:
            for nb in graph.viewpoints[nid].neighbors:
                if nb not in prev:
                    prev[nb] = nid
                    if nb == goal:
                        path = [goal]
                        while prev[path[-1]] is not None:
                            path.append(prev[path[-1]])
                        return path[::-1]
                    nxt.append(nb)
        fringe = nxt
    return [start]


def select_best(
    graph: NavGraph, robot_position: np.ndarray, tol: float = 1e-9
) -> tuple[ViewpointNode, FrontierNode]:
    """Nearest viewpoint among the top-scored ones, plus its best frontier."""
    if not graph.viewpoints:
        raise ExplorationExhausted("graph has no viewpoints")
    if not graph.frontiers:
        raise ExplorationExhausted("no frontiers remain anywhere in the graph")
    pos = np.asarray(robot_position, dtype=np.float64)[:2]
    top = max(v.score for v in graph.viewpoints)
    candidates = [v for v in graph.viewpoints if v.score >= top - tol]
    best_vp = min(
        candidates, key=lambda v: (float(np.linalg.norm(v.position - pos)), v.node_id)
    )
    if best_vp.frontier_ids:
        best_frontier = max(
            (graph.frontiers[f] for f in best_vp.frontier_ids),
            key=lambda f: (f.score, -f.node_id),
        )
        return best_vp, best_frontier
    # fall back to the strongest frontier adjacent to the path toward the best
    # viewpoint (the best viewpoint itself has no frontier neighbor)
    start = min(
        graph.viewpoints,
        key=lambda v: (float(np.linalg.norm(v.position - pos)), v.node_id),
    )
    path = _path_between(graph, start.node_id, best_vp.node_id)
    on_path = [graph.viewpoints[n] for n in path if graph.viewpoints[n].frontier_ids]
    if not on_path:
        on_path = [v for v in graph.viewpoints if v.frontier_ids]
    if not on_path:
        raise ExplorationExhausted("no frontier-bearing viewpoint is reachable")
    anchor = max(on_path, key=lambda v: (v.score, -v.node_id))
    best_frontier = max(
        (graph.frontiers[f] for f in anchor.frontier_ids),
        key=lambda f: (f.score, -f.node_id),
    )
    return best_vp, best_frontier
