"""Terrain patch descriptors and the top-down render of the global region.

A feature at point x samples a sqrt(n_rays) x sqrt(n_rays) lattice of
downward rays over a square patch centered on x; each ray contributes its
surface color and its depth below a fixed ray altitude, concatenated as
(R, G, B, depth) blocks in row-major lattice order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .terrain import OutOfBoundsError, TerrainModel, albedo_at, bilinear

MAX_TOPDOWN_PIXELS = 10**8


@dataclass(frozen=True)
class FeatureConfig:
    n_rays: int = 16
    patch_size: float = 4.0
    ray_height: float = 50.0

    def __post_init__(self):
        side = math.isqrt(self.n_rays)
        if self.n_rays < 1 or side * side != self.n_rays:
            raise ValueError(f"n_rays must be a perfect square, got {self.n_rays}")
        if self.patch_size < 0:
            raise ValueError("patch_size must be >= 0")

    @property
    def side(self) -> int:
        return math.isqrt(self.n_rays)

    @property
    def dim(self) -> int:
        return 4 * self.n_rays

    def offsets(self) -> np.ndarray:
        """(n_rays, 2) lattice offsets from the patch center, row-major (y outer)."""
        n = self.side
        o = ((np.arange(n) + 0.5) / n - 0.5) * self.patch_size
        oy, ox = np.meshgrid(o, o, indexing="ij")
        return np.stack([ox.ravel(), oy.ravel()], axis=1)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray  # (4 * n_rays,)
    point: tuple[float, float]


def patch_inside(t: TerrainModel, xy: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    half = cfg.patch_size / 2.0
    w, h = t.extent
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    return ((xy[:, 0] - half >= 0) & (xy[:, 0] + half <= w)
            & (xy[:, 1] - half >= 0) & (xy[:, 1] + half <= h))


def extract_features(t: TerrainModel, xy, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Batch version of :func:`extract_feature`; returns an (N, 4 * n_rays) array."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    if not np.all(patch_inside(t, xy, cfg)):
        raise OutOfBoundsError("feature patch exits the terrain extent")
    rays = xy[:, None, :] + cfg.offsets()[None, :, :]
    rx, ry = rays[..., 0], rays[..., 1]
    color = np.clip(bilinear(t.albedo, t.res_m, rx, ry), 0.0, 1.0)
    depth = cfg.ray_height - bilinear(t.elevation, t.res_m, rx, ry)
    if np.any(depth <= 0):
        raise ValueError("ray_height lies below the terrain surface")
    feat = np.concatenate([color, depth[..., None]], axis=2)
    return feat.reshape(len(xy), cfg.dim)


def extract_feature(t: TerrainModel, x, cfg: FeatureConfig = FeatureConfig()) -> FeatureVector:
    vals = extract_features(t, x, cfg)[0]
    return FeatureVector(vals, (float(x[0]), float(x[1])))


def grid_features(t: TerrainModel, shape: tuple[int, int], cfg: FeatureConfig = FeatureConfig(),
                  cell_m: float = 1.0) -> np.ndarray:
    """Features at every cell center of a ``cell_m`` grid; NaN rows where the patch exits."""
    h, w = shape
    ys, xs = np.meshgrid((np.arange(h) + 0.5) * cell_m, (np.arange(w) + 0.5) * cell_m,
                         indexing="ij")
    xy = np.stack([xs.ravel(), ys.ravel()], axis=1)
    ok = patch_inside(t, xy, cfg)
    out = np.full((len(xy), cfg.dim), np.nan)
    if np.any(ok):
        out[ok] = extract_features(t, xy[ok], cfg)
    return out.reshape(h, w, cfg.dim)


@dataclass(frozen=True, eq=False)
class TopDownImage:
    rgb: np.ndarray  # (H, W, 3)
    elevation: np.ndarray  # (H, W)
    m_per_px: float
    origin: tuple[float, float] = (0.0, 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rgb.shape[:2]

    def pixel_center(self, i, j):
        return (self.origin[0] + (np.asarray(j) + 0.5) * self.m_per_px,
                self.origin[1] + (np.asarray(i) + 0.5) * self.m_per_px)

    def luminance(self) -> np.ndarray:
        return luminance(self.rgb)

    def save(self, path: str | Path) -> None:
        """8-bit PNG plus a ``.geo`` sidecar (origin_x, origin_y, m_per_px).

        Image row 0 is the southern edge (y = origin), so the PNG appears flipped
        relative to a north-up map.
        """
        from PIL import Image

        path = Path(path)
        img = np.round(np.clip(self.rgb, 0, 1) * 255).astype(np.uint8)
        Image.fromarray(img, mode="RGB").save(path)
        path.with_suffix(".geo").write_text(
            f"origin_x {self.origin[0]}\norigin_y {self.origin[1]}\nm_per_px {self.m_per_px}\n")


def luminance(rgb: np.ndarray) -> np.ndarray:
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def render_topdown(t: TerrainModel, m_per_px: float = 0.5) -> TopDownImage:
    """Orthographic nadir render sampled at pixel centers."""
    if m_per_px <= 0:
        raise ValueError("m_per_px must be positive")
    width, height = t.extent
    nw = int(math.floor(width / m_per_px + 1e-9))
    nh = int(math.floor(height / m_per_px + 1e-9))
    if nw * nh > MAX_TOPDOWN_PIXELS:
        raise ValueError(f"top-down render of {nw}x{nh} pixels exceeds limit")
    if nw < 1 or nh < 1:
        raise ValueError("terrain smaller than one pixel")
    ys, xs = np.meshgrid((np.arange(nh) + 0.5) * m_per_px, (np.arange(nw) + 0.5) * m_per_px,
                         indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    rgb = albedo_at(t, pts).reshape(nh, nw, 3)
    elev = bilinear(t.elevation, t.res_m, pts[:, 0], pts[:, 1]).reshape(nh, nw)
    return TopDownImage(rgb, elev, m_per_px)
