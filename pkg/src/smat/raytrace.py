"""Exact 3D grid ray traversal (Amanatides-Woo DDA).

Used as the n_free oracle for the occupancy-probability-only back-end variant
and in tests as the ground-truth counterpart of the visibility check. Not on
the visibility-check production path.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_PACK_OFFSET = 1 << 20


@njit(cache=True)
def _traverse(origin, endpoints, resolution, out):
    """Collect packed keys of voxels strictly between origin and each endpoint.

    The endpoint's own voxel is excluded. Returns the number of keys written.
    """
    count = 0
    ox, oy, oz = origin[0], origin[1], origin[2]
    for i in range(endpoints.shape[0]):
        ex, ey, ez = endpoints[i, 0], endpoints[i, 1], endpoints[i, 2]
        dx, dy, dz = ex - ox, ey - oy, ez - oz
        length = (dx * dx + dy * dy + dz * dz) ** 0.5
        if length <= 0.0:
            continue
        # current and terminal voxel indices
        ix = int(np.floor(ox / resolution))
        iy = int(np.floor(oy / resolution))
        iz = int(np.floor(oz / resolution))
        tx = int(np.floor(ex / resolution))
        ty = int(np.floor(ey / resolution))
        tz = int(np.floor(ez / resolution))

        sx = 1 if dx > 0 else -1
        sy = 1 if dy > 0 else -1
        sz = 1 if dz > 0 else -1
        big = 1e30
        t_max_x = ((ix + (sx > 0)) * resolution - ox) / dx if dx != 0.0 else big
        t_max_y = ((iy + (sy > 0)) * resolution - oy) / dy if dy != 0.0 else big
        t_max_z = ((iz + (sz > 0)) * resolution - oz) / dz if dz != 0.0 else big
        t_dx = resolution / abs(dx) if dx != 0.0 else big
        t_dy = resolution / abs(dy) if dy != 0.0 else big
        t_dz = resolution / abs(dz) if dz != 0.0 else big

        steps = 0
        max_steps = abs(tx - ix) + abs(ty - iy) + abs(tz - iz) + 3
        while steps < max_steps:
            if ix == tx and iy == ty and iz == tz:
                break
            # record the current voxel (never the endpoint voxel)
            key = (
                ((ix + _PACK_OFFSET) << 42)
                | ((iy + _PACK_OFFSET) << 21)
                | (iz + _PACK_OFFSET)
            )
            if count < out.shape[0]:
                out[count] = key
                count += 1
            if t_max_x <= t_max_y and t_max_x <= t_max_z:
                ix += sx
                t_max_x += t_dx
            elif t_max_y <= t_max_z:
                iy += sy
                t_max_y += t_dy
            else:
                iz += sz
                t_max_z += t_dz
            steps += 1
        # origin voxel was recorded above; endpoint voxel intentionally not
    return count


def traversed_voxels(
    origin: np.ndarray, endpoints: np.ndarray, resolution: float
) -> np.ndarray:
    """Unique packed voxel keys traversed by rays from origin to each endpoint,
    excluding each endpoint's own voxel."""
    endpoints = np.ascontiguousarray(endpoints, dtype=np.float64)
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    if endpoints.size == 0:
        return np.empty(0, dtype=np.int64)
    # worst-case voxel count: manhattan path length per ray
    spans = np.abs(
        np.floor(endpoints / resolution) - np.floor(origin / resolution)
    ).sum(axis=1)
    cap = int(spans.sum() + 3 * len(endpoints))
    out = np.empty(max(cap, 1), dtype=np.int64)
    n = _traverse(origin, endpoints, float(resolution), out)
    return np.unique(out[:n])
