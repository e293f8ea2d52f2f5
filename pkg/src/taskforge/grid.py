"""Occupancy grid over the world: base-pose free space, reachability, path planning.

Cell (i, j) has its center at (xmin + i*res, ymin + j*res).  A cell is free for
the robot base iff the base disk, dilated by the planner inflation, stays
strictly clear of every floor-level entity and inside the world bounds.
Flat cell indices are x-major, so index order equals lexicographic (x, y) order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import NoPath
from .scene import Disk, Pose2, Rect, SceneGraph

GRID_RES = 0.05
_SQRT2 = math.sqrt(2.0)
_FREE_TOL = 1e-9
_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class GridSpec:
    xmin: float
    ymin: float
    nx: int
    ny: int
    res: float

    @classmethod
    def for_bounds(cls, bounds: Rect, res=GRID_RES):
        nx = int(math.floor((bounds.xmax - bounds.xmin) / res + 1e-9)) + 1
        ny = int(math.floor((bounds.ymax - bounds.ymin) / res + 1e-9)) + 1
        return cls(bounds.xmin, bounds.ymin, nx, ny, res)

    def center(self, idx):
        i, j = divmod(int(idx), self.ny)
        return self.xmin + i * self.res, self.ymin + j * self.res

    def cell_of(self, x, y):
        i = int(round((x - self.xmin) / self.res))
        j = int(round((y - self.ymin) / self.res))
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            return None
        return i * self.ny + j


def _geometry_key(scene: SceneGraph, exclude=()):
    """Hashable description of the floor-level obstacles."""
    out = []
    for e in scene.entities:
        if e.parent is not None or e.id in exclude:
            continue
        out.append((e.shape, e.scale, e.pose.x, e.pose.y, e.pose.theta))
    return tuple(out)


def _sdf(shape, scale, x, y, theta, px, py):
    dx = px - x
    dy = py - y
    if isinstance(shape, Disk):
        return np.hypot(dx, dy) - shape.radius * scale
    hw, hh = shape.half_extents(scale, theta)
    qx = np.abs(dx) - hw
    qy = np.abs(dy) - hh
    return np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0)) + np.minimum(np.maximum(qx, qy), 0.0)


class Occupancy:
    """Free-space mask plus the 8-connected graph over free cells."""

    def __init__(self, spec: GridSpec, free: np.ndarray):
        self.spec = spec
        self.free = free  # flat bool, x-major
        n = spec.nx * spec.ny
        idx = np.arange(n).reshape(spec.nx, spec.ny)
        fr = free.reshape(spec.nx, spec.ny)
        rows, cols, wts = [], [], []
        for di, dj in _NEIGHBORS:
            i0, i1 = max(0, -di), spec.nx - max(0, di)
            j0, j1 = max(0, -dj), spec.ny - max(0, dj)
            a = fr[i0:i1, j0:j1]
            b = fr[i0 + di:i1 + di, j0 + dj:j1 + dj]
            ok = a & b
            if di != 0 and dj != 0:
                # no corner cutting
                ok &= fr[i0 + di:i1 + di, j0:j1] & fr[i0:i1, j0 + dj:j1 + dj]
            src = idx[i0:i1, j0:j1][ok]
            dst = idx[i0 + di:i1 + di, j0 + dj:j1 + dj][ok]
            rows.append(src)
            cols.append(dst)
            wts.append(np.full(src.shape, _SQRT2 if di and dj else 1.0))
        self.graph = csr_matrix(
            (np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
        self.free_idx = np.flatnonzero(free)
        cx, cy = np.divmod(self.free_idx, spec.ny)
        self.free_x = spec.xmin + cx * spec.res
        self.free_y = spec.ymin + cy * spec.res
        self._dist = {}
        self._steps = {}

    def distances(self, start: int) -> np.ndarray:
        d = self._dist.get(start)
        if d is None:
            if not self.free[start]:
                d = np.full(self.free.shape, np.inf)
                d[start] = 0.0
            else:
                d = dijkstra(self.graph, directed=True, indices=start)
            if len(self._dist) > 256:
                self._dist.clear()
            self._dist[start] = d
        return d

    def nearest_free(self, x, y):
        if self.free_idx.size == 0:
            return None
        d2 = (self.free_x - x) ** 2 + (self.free_y - y) ** 2
        return int(self.free_idx[int(np.argmin(d2))])

    def path(self, start: int, goal: int):
        """Cell indices from start to goal, or None if disconnected."""
        dist = self.distances(start)
        if not np.isfinite(dist[goal]) or not self.free[goal] or not self.free[start]:
            return None
        ny, nx = self.spec.ny, self.spec.nx
        fr = self.free
        out = [goal]
        cur = goal
        while cur != start:
            ci, cj = divmod(cur, ny)
            best = None
            for di, dj in _NEIGHBORS:
                ni, nj = ci + di, cj + dj
                if not (0 <= ni < nx and 0 <= nj < ny):
                    continue
                nb = ni * ny + nj
                if not fr[nb]:
                    continue
                if di and dj and not (fr[ni * ny + cj] and fr[ci * ny + nj]):
                    continue
                w = _SQRT2 if di and dj else 1.0
                if abs(dist[nb] + w - dist[cur]) < 1e-9 and (best is None or nb < best):
                    best = nb
            cur = best
            out.append(cur)
        out.reverse()
        return out

    def steps(self, start: int, goal: int):
        key = (start, goal)
        if key not in self._steps:
            p = self.path(start, goal)
            self._steps[key] = None if p is None else len(p) - 1
        return self._steps[key]


@lru_cache(maxsize=32)
def _occupancy(bounds: Rect, geoms, dilation: float, res: float) -> Occupancy:
    spec = GridSpec.for_bounds(bounds, res)
    i = np.arange(spec.nx)
    j = np.arange(spec.ny)
    X = (spec.xmin + i * res)[:, None] * np.ones((1, spec.ny))
    Y = np.ones((spec.nx, 1)) * (spec.ymin + j * res)[None, :]
    free = ((X - dilation >= bounds.xmin - _FREE_TOL) & (X + dilation <= bounds.xmax + _FREE_TOL)
            & (Y - dilation >= bounds.ymin - _FREE_TOL) & (Y + dilation <= bounds.ymax + _FREE_TOL))
    for shape, scale, x, y, theta in geoms:
        free &= _sdf(shape, scale, x, y, theta, X, Y) > dilation + _FREE_TOL
    return Occupancy(spec, free.ravel())


def occupancy(scene: SceneGraph, dilation: float, exclude=(), res=GRID_RES) -> Occupancy:
    return _occupancy(scene.world_bounds, _geometry_key(scene, exclude), round(float(dilation), 12), res)


def robot_cell(occ: Occupancy, scene: SceneGraph):
    p = scene.robot.base_pose
    return occ.spec.cell_of(p.x, p.y)


def plan_path(scene: SceneGraph, start: Pose2, goal: Pose2, inflation_r: float,
              exclude=(), res=GRID_RES):
    """Shortest 8-connected path over obstacles dilated by base_radius + inflation_r.

    Returns the waypoint poses (cell centers) from start to goal; raises NoPath.
    Among equal-cost paths the predecessor with the smallest (x, y) is taken,
    walking back from the goal.
    """
    if inflation_r < 0:
        raise ValueError("inflation_r must be non-negative")
    b = scene.world_bounds
    if not (b.contains(start.x, start.y) and b.contains(goal.x, goal.y)):
        raise ValueError("start and goal must lie inside the world bounds")
    occ = occupancy(scene, scene.robot.base_radius + inflation_r, exclude, res)
    s = occ.spec.cell_of(start.x, start.y)
    g = occ.spec.cell_of(goal.x, goal.y)
    cells = occ.path(s, g)
    if cells is None:
        raise NoPath(f"no path from ({start.x:.2f}, {start.y:.2f}) to ({goal.x:.2f}, {goal.y:.2f})")
    out = []
    for k, c in enumerate(cells):
        x, y = occ.spec.center(c)
        if k + 1 < len(cells):
            nx_, ny_ = occ.spec.center(cells[k + 1])
            th = math.atan2(ny_ - y, nx_ - x)
        else:
            th = goal.theta
        out.append(Pose2(x, y, th))
    return out


def query_reach(scene: SceneGraph, target: str, reach=None):
    """Is there a collision-free base pose, connected to the robot's current
    pose, from which the target centroid is within reach?

    Returns (reachable, witness_pose_or_None).  The witness is the connected
    free cell closest to the target.
    """
    ent = scene.get(target)
    reach = scene.robot.reach if reach is None else reach
    occ = occupancy(scene, scene.robot.base_radius)
    start = robot_cell(occ, scene)
    if start is None or not occ.free[start]:
        return False, None
    dist = occ.distances(start)
    conn = np.isfinite(dist[occ.free_idx])
    d = np.hypot(occ.free_x - ent.pose.x, occ.free_y - ent.pose.y)
    ok = conn & (d <= reach + 1e-9)
    if not ok.any():
        return False, None
    cand = np.flatnonzero(ok)
    k = cand[int(np.argmin(d[cand]))]
    x, y = float(occ.free_x[k]), float(occ.free_y[k])
    return True, Pose2(x, y, math.atan2(ent.pose.y - y, ent.pose.x - x))
