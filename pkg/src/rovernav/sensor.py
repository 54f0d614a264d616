"""Simulated depth sensing and the rover-centric local traversability costmap.

Frames: the rover-local frame has x forward, y left, z up, with its origin on
the ground directly beneath the rover. Depth images store optical-axis depth
(the z-depth of a pinhole camera), with NaN marking invalid pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kinematics import RoverState
from .terrain import OutOfBoundsError, TerrainModel, bilinear

MIN_SPREAD_M = 0.05


@dataclass(frozen=True)
class CameraModel:
    height_above_ground: float = 1.5
    pitch: float = -math.pi / 6
    hfov: float = math.pi / 2
    h: int = 48
    w: int = 64
    d_thresh: float = 20.0
    march_step: float = 0.1

    def __post_init__(self):
        if not (0 < self.hfov < math.pi):
            raise ValueError("hfov must lie in (0, pi)")
        if self.h < 2 or self.w < 2:
            raise ValueError("image must be at least 2x2")
        if self.d_thresh <= 0:
            raise ValueError("d_thresh must be positive")

    @property
    def focal(self) -> float:
        return (self.w / 2.0) / math.tan(self.hfov / 2.0)

    def frame(self, heading: float = 0.0):
        """Unit forward/right/down axes of the camera in the world frame."""
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        ch, sh = math.cos(heading), math.sin(heading)
        fwd = np.array([ch * cp, sh * cp, sp])
        right = np.array([sh, -ch, 0.0])
        down = -np.array([-ch * sp, -sh * sp, cp])
        return fwd, right, down

    def ray_directions(self, heading: float = 0.0):
        """Unit ray directions (h, w, 3) and their cosine to the optical axis."""
        fwd, right, down = self.frame(heading)
        u = np.arange(self.w) + 0.5 - self.w / 2.0
        v = np.arange(self.h) + 0.5 - self.h / 2.0
        d = (self.focal * fwd[None, None, :]
             + u[None, :, None] * right[None, None, :]
             + v[:, None, None] * down[None, None, :])
        norm = np.linalg.norm(d, axis=2, keepdims=True)
        d = d / norm
        cosang = self.focal / norm[..., 0]
        return d, cosang


@dataclass(frozen=True)
class DepthImage:
    depth: np.ndarray  # (h, w), NaN = invalid

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3), rover-local frame

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class LocalCostMap:
    """Grid of costs ahead of the rover; row index = forward x, column = lateral y.

    Cell (i, j) covers x in [i, i+1), y in [j - d, j - d + 1) with d = d_thresh.
    Unobserved cells hold 0 in ``costs`` and False in ``observed``.
    """

    costs: np.ndarray
    observed: np.ndarray
    pose: RoverState
    d_thresh: int

    def lookup(self, local_xy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cost, observed flag and in-bounds flag for (N, 2) local points."""
        pts = np.asarray(local_xy, dtype=float).reshape(-1, 2)
        i, j, inside = local_cell_index(pts, self.d_thresh)
        ii = np.where(inside, i, 0)
        jj = np.where(inside, j, 0)
        cost = np.where(inside, self.costs[ii, jj], 0.0)
        obs = inside & self.observed[ii, jj]
        return cost, obs, inside

    def cell_centers(self) -> np.ndarray:
        """Local (x, y) of every observed cell center, row-major order."""
        i, j = np.nonzero(self.observed)
        return np.stack([i + 0.5, j - self.d_thresh + 0.5], axis=1).astype(float)

    def to_csv(self, path) -> None:
        grid = np.where(self.observed, self.costs, np.nan)
        np.savetxt(path, grid, delimiter=",", fmt="%.6g")


def local_cell_index(pts: np.ndarray, d_thresh: int):
    i = np.floor(pts[:, 0]).astype(np.intp)
    j = np.floor(pts[:, 1] + d_thresh).astype(np.intp)
    inside = (i >= 0) & (i < d_thresh) & (j >= 0) & (j < 2 * d_thresh)
    return i, j, inside


def render_depth_image(t: TerrainModel, pose: RoverState, cam: CameraModel,
                       refine_iters: int = 10) -> DepthImage:
    """Ray-cast the terrain from the rover camera.

    Fixed-step marching along each ray, then bisection on the bracketing step.
    Rays that leave the extent or whose depth exceeds ``d_thresh`` are invalid.
    """
    if not bool(t.contains(pose.x, pose.y)):
        raise OutOfBoundsError(f"pose ({pose.x}, {pose.y}) outside terrain")
    ground = float(bilinear(t.elevation, t.res_m, pose.x, pose.y))
    origin = np.array([pose.x, pose.y, ground + cam.height_above_ground])
    if cam.height_above_ground <= 0:
        raise ValueError("camera is below the terrain surface")

    dirs, cosang = cam.ray_directions(pose.theta)
    dirs = dirs.reshape(-1, 3)
    cosang = cosang.reshape(-1)
    t_max = cam.d_thresh / cosang
    width, height = t.extent
    n = len(dirs)
    hit_t = np.full(n, np.nan)

    def above(idx, tt):
        p = origin[None, :] + tt[:, None] * dirs[idx]
        inside = (p[:, 0] >= 0) & (p[:, 0] <= width) & (p[:, 1] >= 0) & (p[:, 1] <= height)
        z = bilinear(t.elevation, t.res_m, p[:, 0], p[:, 1])
        return p[:, 2] - z, inside

    active = np.arange(n)
    step = cam.march_step
    t_prev = np.zeros(n)
    k = 1
    while active.size:
        tt = np.minimum(k * step, t_max[active])
        gap, inside = above(active, tt)
        hit = inside & (gap <= 0)
        if np.any(hit):
            idx = active[hit]
            lo = t_prev[idx].copy()
            hi = tt[hit].copy()
            for _ in range(refine_iters):
                mid = 0.5 * (lo + hi)
                g, _ = above(idx, mid)
                below = g <= 0
                hi = np.where(below, mid, hi)
                lo = np.where(below, lo, mid)
            hit_t[idx] = hi
        done = hit | ~inside | (tt >= t_max[active])
        t_prev[active] = tt
        active = active[~done]
        k += 1

    depth = hit_t * cosang
    depth[~(depth <= cam.d_thresh)] = np.nan
    depth[depth <= 0] = np.nan
    return DepthImage(depth.reshape(cam.h, cam.w))


def project_point_cloud(d: DepthImage, cam: CameraModel) -> PointCloud:
    """Back-project valid pixels into the rover-local frame."""
    if d.depth.shape != (cam.h, cam.w):
        raise ValueError(f"depth image shape {d.depth.shape} != camera {(cam.h, cam.w)}")
    dirs, cosang = cam.ray_directions(0.0)
    valid = d.valid
    rng = d.depth[valid] / cosang[valid]
    pts = rng[:, None] * dirs[valid]
    pts[:, 2] += cam.height_above_ground
    return PointCloud(pts)


def build_local_costmap(p: PointCloud, pose: RoverState, weights=(1.0, 10.0),
                        d_thresh: float = 20.0, min_points: int = 1) -> LocalCostMap:
    """Per-cell cost = w_grad * plane-fit slope + w_var * population variance of z.

    Cells with fewer than ``min_points`` points stay unobserved; cells with
    fewer than 3 points get slope 0. The plane fit ignores any
    direction along which the cell's points spread less than MIN_SPREAD_M,
    so a cell hit by a single scanline reports only its along-line slope.
    """
    w_grad, w_var = weights
    if w_grad < 0 or w_var < 0:
        raise ValueError("cost weights must be nonnegative")
    d = int(round(d_thresh))
    shape = (d, 2 * d)
    ncell = shape[0] * shape[1]
    pts = np.asarray(p.points, dtype=float).reshape(-1, 3)
    i, j, inside = local_cell_index(pts, d)
    pts = pts[inside]
    flat = i[inside] * shape[1] + j[inside]

    count = np.bincount(flat, minlength=ncell).astype(float)
    observed = count >= max(min_points, 1)
    safe = np.maximum(count, 1.0)

    def cell_mean(v):
        return np.bincount(flat, weights=v, minlength=ncell) / safe

    mx, my, mz = (cell_mean(pts[:, k]) for k in range(3))
    cx = pts[:, 0] - mx[flat]
    cy = pts[:, 1] - my[flat]
    cz = pts[:, 2] - mz[flat]
    var = cell_mean(cz * cz)

    slope = np.zeros(ncell)
    fit = observed & (count >= 3)
    if np.any(fit):
        sxx, sxy, syy = cell_mean(cx * cx), cell_mean(cx * cy), cell_mean(cy * cy)
        sxz, syz = cell_mean(cx * cz), cell_mean(cy * cz)
        a = np.stack([np.stack([sxx, sxy], -1), np.stack([sxy, syy], -1)], -2)[fit]
        b = np.stack([sxz, syz], -1)[fit]
        # truncated solve: directions with spread under MIN_SPREAD_M carry no slope
        evals, evecs = np.linalg.eigh(a)
        proj = np.einsum("nji,nj->ni", evecs, b)
        keep = evals > MIN_SPREAD_M**2
        comp = np.where(keep, proj / np.where(keep, evals, 1.0), 0.0)
        slope[fit] = np.hypot(comp[:, 0], comp[:, 1])

    cost = np.where(observed, w_grad * slope + w_var * var, 0.0)
    return LocalCostMap(cost.reshape(shape), observed.reshape(shape), pose, d)


def sense(t: TerrainModel, pose: RoverState, cam: CameraModel, weights=(1.0, 10.0),
          min_points: int = 1) -> LocalCostMap:
    """Depth render -> point cloud -> local costmap in one call."""
    depth = render_depth_image(t, pose, cam)
    cloud = project_point_cloud(depth, cam)
    return build_local_costmap(cloud, pose, weights, cam.d_thresh, min_points)
