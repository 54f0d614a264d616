"""Synthetic ground-truth world: elevation, albedo and rock instances.

Grid convention: sample ``[i, j]`` sits at world point ``(j * res_m, i * res_m)``,
so the grid spans ``[0, width_m] x [0, height_m]`` and sample (0, 0) is the
world origin. Queries between samples are bilinear.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

C_MAX = 1.0e6
MAX_ROCKS = 1_000_000

ROCK_RADIUS = {"small": (0.05, 0.10), "medium": (0.10, 0.20)}
ROCK_HEIGHT = {"small": (0.16, 0.24), "medium": (0.30, 0.45)}

# value-noise lattice: (spacing m, relative amplitude) per octave
NOISE_OCTAVES = ((20.0, 1.0), (5.0, 0.35))
RUBBLE_SPACING = 0.8
RUBBLE_TAPER = 1.0
ALBEDO_OCTAVES = ((12.0, 1.0),)

BASE_ALBEDO = 0.42
ALBEDO_NOISE = 0.03
FIELD_TINT = 0.33
ROCK_TINT = 0.15
CRATER_DARKEN = 0.45

SMALL_ROCK_PENALTY = 5.0
W_SLOPE = 1.0


class OutOfBoundsError(ValueError):
    """Query point lies outside the terrain extent."""


@dataclass(frozen=True)
class RockInstance:
    center: tuple[float, float]
    radius: float
    height: float
    rock_class: str


@dataclass(frozen=True)
class Crater:
    center: tuple[float, float]
    radius: float
    depth: float


@dataclass(frozen=True)
class RockField:
    rect: tuple[float, float, float, float]  # x0, y0, x1, y1
    rock_class: str = "small"
    density: float = 1.0  # rocks per m^2
    height_range: tuple[float, float] | None = None
    rubble: float = 0.0  # amplitude (m) of gravel relief between rocks

    def contains(self, p: Sequence[float]) -> bool:
        x0, y0, x1, y1 = self.rect
        return x0 <= p[0] <= x1 and y0 <= p[1] <= y1


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    extent: tuple[float, float]
    start: tuple[float, float]
    goal: tuple[float, float]
    rock_field: RockField | None = None
    craters: tuple[Crater, ...] = ()
    roughness: float = 0.0
    res_m: float = 0.5
    name: str = "scenario"
    # free-form overrides for sensor/planner/sim configuration
    config: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def validate(self) -> None:
        w, h = self.extent
        if w <= 0 or h <= 0:
            raise ValueError(f"extent must be positive, got {self.extent}")
        if self.res_m <= 0:
            raise ValueError(f"res_m must be positive, got {self.res_m}")
        for name, p in (("start", self.start), ("goal", self.goal)):
            if not (0 <= p[0] <= w and 0 <= p[1] <= h):
                raise ValueError(f"{name} {p} outside extent {self.extent}")
        rf = self.rock_field
        if rf is not None:
            if rf.rock_class not in ROCK_RADIUS:
                raise ValueError(f"unknown rock class {rf.rock_class!r}")
            x0, y0, x1, y1 = rf.rect
            if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
                raise ValueError(f"rock_field rect {rf.rect} invalid for extent")
            if rf.density < 0:
                raise ValueError("rock density must be >= 0")
            if rf.density * (x1 - x0) * (y1 - y0) > MAX_ROCKS:
                raise ValueError("rock density yields more than 1e6 rocks")
            if rf.contains(self.start):
                raise ValueError("start lies inside the rock field")
        for c in self.craters:
            if c.radius <= 0 or c.depth < 0:
                raise ValueError(f"bad crater {c}")


@dataclass(frozen=True, eq=False)
class TerrainModel:
    elevation: np.ndarray  # (H, W) m
    albedo: np.ndarray  # (H, W, 3) in [0, 1]
    rocks: tuple[RockInstance, ...]
    res_m: float

    def __post_init__(self):
        if self.elevation.shape != self.albedo.shape[:2]:
            raise ValueError("elevation and albedo grids differ in shape")
        self.elevation.setflags(write=False)
        self.albedo.setflags(write=False)
        centers = np.array([r.center for r in self.rocks], dtype=float).reshape(-1, 2)
        object.__setattr__(self, "_rock_xy", centers)
        object.__setattr__(self, "_rock_r", np.array([r.radius for r in self.rocks], float))

    @property
    def extent(self) -> tuple[float, float]:
        h, w = self.elevation.shape
        return ((w - 1) * self.res_m, (h - 1) * self.res_m)

    def contains(self, x, y) -> np.ndarray:
        w, h = self.extent
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= 0) & (x <= w) & (y >= 0) & (y <= h)

    @property
    def rock_centers(self) -> np.ndarray:
        return self._rock_xy

    @property
    def rock_radii(self) -> np.ndarray:
        return self._rock_r


# ---------------------------------------------------------------------------
# generation


def _value_noise(shape, res_m, spacing, rng) -> np.ndarray:
    """Smoothstep-interpolated value noise on a lattice of the given spacing."""
    h, w = shape
    ny = int(np.ceil((h - 1) * res_m / spacing)) + 2
    nx = int(np.ceil((w - 1) * res_m / spacing)) + 2
    lattice = rng.uniform(-1.0, 1.0, size=(ny, nx))
    gy = np.arange(h) * res_m / spacing
    gx = np.arange(w) * res_m / spacing
    iy = np.floor(gy).astype(int)
    ix = np.floor(gx).astype(int)
    ty = gy - iy
    tx = gx - ix
    sy = (ty * ty * (3 - 2 * ty))[:, None]
    sx = (tx * tx * (3 - 2 * tx))[None, :]
    v00 = lattice[np.ix_(iy, ix)]
    v01 = lattice[np.ix_(iy, ix + 1)]
    v10 = lattice[np.ix_(iy + 1, ix)]
    v11 = lattice[np.ix_(iy + 1, ix + 1)]
    top = v00 + (v01 - v00) * sx
    bot = v10 + (v11 - v10) * sx
    return top + (bot - top) * sy


def _radial_window(center, radius, res_m, shape):
    """Index window and distance grid for samples within radius of center."""
    h, w = shape
    cx, cy = center
    j0 = max(int(np.floor((cx - radius) / res_m)), 0)
    j1 = min(int(np.ceil((cx + radius) / res_m)), w - 1)
    i0 = max(int(np.floor((cy - radius) / res_m)), 0)
    i1 = min(int(np.ceil((cy + radius) / res_m)), h - 1)
    if j1 < j0 or i1 < i0:
        return None
    ys = np.arange(i0, i1 + 1) * res_m
    xs = np.arange(j0, j1 + 1) * res_m
    d = np.hypot(xs[None, :] - cx, ys[:, None] - cy)
    return (slice(i0, i1 + 1), slice(j0, j1 + 1)), d


def _rect_taper(rect, shape, res_m) -> np.ndarray:
    """1 inside rect, falling linearly to 0 over RUBBLE_TAPER at its edges."""
    x0, y0, x1, y1 = rect
    xs = np.arange(shape[1]) * res_m
    ys = np.arange(shape[0]) * res_m
    tx = np.clip(np.minimum(xs - x0, x1 - xs) / RUBBLE_TAPER, 0.0, 1.0)
    ty = np.clip(np.minimum(ys - y0, y1 - ys) / RUBBLE_TAPER, 0.0, 1.0)
    return ty[:, None] * tx[None, :]


def cos2_bump(d, radius):
    """Compactly supported bump: 1 at d=0, 0 for d >= radius."""
    d = np.asarray(d, dtype=float)
    out = np.cos(np.pi * d / (2.0 * radius)) ** 2
    return np.where(d <= radius, out, 0.0)


def place_rocks(rf: RockField, seed: int) -> tuple[RockInstance, ...]:
    x0, y0, x1, y1 = rf.rect
    n = int(round(rf.density * (x1 - x0) * (y1 - y0)))
    if n > MAX_ROCKS:
        raise ValueError("rock density yields more than 1e6 rocks")
    rng = np.random.default_rng([seed, 2])
    xs = rng.uniform(x0, x1, n)
    ys = rng.uniform(y0, y1, n)
    rlo, rhi = ROCK_RADIUS[rf.rock_class]
    hlo, hhi = rf.height_range or ROCK_HEIGHT[rf.rock_class]
    radii = rng.uniform(rlo, rhi, n)
    heights = rng.uniform(hlo, hhi, n)
    return tuple(
        RockInstance((float(x), float(y)), float(r), float(hh), rf.rock_class)
        for x, y, r, hh in zip(xs, ys, radii, heights)
    )


def generate_terrain(spec: ScenarioSpec, rocks: Sequence[RockInstance] | None = None) -> TerrainModel:
    """Build the terrain for a scenario. Pure function of ``spec``.

    ``rocks`` overrides the rocks drawn from the rock field (used by tests).
    """
    spec.validate()
    width, height = spec.extent
    res = spec.res_m
    shape = (int(round(height / res)) + 1, int(round(width / res)) + 1)

    elev = np.zeros(shape)
    if spec.roughness > 0:
        rng = np.random.default_rng([spec.seed, 0])
        for spacing, amp in NOISE_OCTAVES:
            elev += spec.roughness * amp * _value_noise(shape, res, spacing, rng)

    rng = np.random.default_rng([spec.seed, 1])
    gray = BASE_ALBEDO + ALBEDO_NOISE * _value_noise(shape, res, ALBEDO_OCTAVES[0][0], rng)
    albedo = np.repeat(gray[:, :, None], 3, axis=2)

    if spec.rock_field is not None:
        x0, y0, x1, y1 = spec.rock_field.rect
        i0, i1 = int(np.ceil(y0 / res)), int(np.floor(y1 / res))
        j0, j1 = int(np.ceil(x0 / res)), int(np.floor(x1 / res))
        albedo[i0:i1 + 1, j0:j1 + 1] += FIELD_TINT
        if spec.rock_field.rubble > 0:
            rng = np.random.default_rng([spec.seed, 3])
            noise = _value_noise(shape, res, RUBBLE_SPACING, rng)
            elev += spec.rock_field.rubble * noise * _rect_taper(spec.rock_field.rect, shape, res)

    for c in spec.craters:
        win = _radial_window(c.center, c.radius, res, shape)
        if win is None:
            continue
        sl, d = win
        prof = cos2_bump(d, c.radius)
        elev[sl] -= c.depth * prof
        albedo[sl] *= (1.0 - CRATER_DARKEN * prof)[:, :, None]

    if rocks is None:
        rocks = place_rocks(spec.rock_field, spec.seed) if spec.rock_field is not None else ()
    for r in rocks:
        if r.radius <= 0 or r.height <= 0:
            raise ValueError(f"rock radius and height must be positive: {r}")
        if not (0 <= r.center[0] <= width and 0 <= r.center[1] <= height):
            raise ValueError(f"rock center {r.center} outside extent")
        win = _radial_window(r.center, r.radius, res, shape)
        if win is None:
            continue
        sl, d = win
        prof = cos2_bump(d, r.radius)
        elev[sl] += r.height * prof
        albedo[sl] += ROCK_TINT * prof[:, :, None]

    np.clip(albedo, 0.0, 1.0, out=albedo)
    return TerrainModel(elevation=elev, albedo=albedo, rocks=tuple(rocks), res_m=res)


# ---------------------------------------------------------------------------
# queries


def _as_points(p):
    arr = np.asarray(p, dtype=float)
    single = arr.ndim == 1
    return arr.reshape(-1, 2), single


def bilinear(grid: np.ndarray, res_m: float, x, y):
    """Bilinear sample of ``grid`` at world coords; caller guarantees bounds.

    Works for (H, W) and (H, W, C) grids. Coordinates are clipped to the grid.
    """
    h, w = grid.shape[:2]
    gx = np.clip(np.asarray(x, dtype=float) / res_m, 0.0, w - 1)
    gy = np.clip(np.asarray(y, dtype=float) / res_m, 0.0, h - 1)
    j = np.minimum(np.floor(gx).astype(np.intp), w - 2) if w > 1 else np.zeros_like(gx, np.intp)
    i = np.minimum(np.floor(gy).astype(np.intp), h - 2) if h > 1 else np.zeros_like(gy, np.intp)
    fx = gx - j
    fy = gy - i
    j1 = np.minimum(j + 1, w - 1)
    i1 = np.minimum(i + 1, h - 1)
    if grid.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v00 = grid[i, j]
    v01 = grid[i, j1]
    v10 = grid[i1, j]
    v11 = grid[i1, j1]
    top = v00 + (v01 - v00) * fx
    bot = v10 + (v11 - v10) * fx
    return top + (bot - top) * fy


def _check_inside(t: TerrainModel, pts: np.ndarray) -> None:
    inside = t.contains(pts[:, 0], pts[:, 1])
    if not np.all(inside):
        bad = pts[~inside][0]
        raise OutOfBoundsError(f"point ({bad[0]:.3f}, {bad[1]:.3f}) outside extent {t.extent}")


def height_at(t: TerrainModel, p):
    """Elevation at ``p`` (a point or an (N, 2) array of points)."""
    pts, single = _as_points(p)
    _check_inside(t, pts)
    z = bilinear(t.elevation, t.res_m, pts[:, 0], pts[:, 1])
    return float(z[0]) if single else z


def albedo_at(t: TerrainModel, p):
    pts, single = _as_points(p)
    _check_inside(t, pts)
    rgb = np.clip(bilinear(t.albedo, t.res_m, pts[:, 0], pts[:, 1]), 0.0, 1.0)
    return rgb[0] if single else rgb


def elevation_gradient(t: TerrainModel, p):
    """Gradient of the bilinear elevation surface (one-sided at cell edges)."""
    pts, single = _as_points(p)
    _check_inside(t, pts)
    z = t.elevation
    h, w = z.shape
    res = t.res_m
    gx = np.clip(pts[:, 0] / res, 0.0, w - 1)
    gy = np.clip(pts[:, 1] / res, 0.0, h - 1)
    j = np.minimum(np.floor(gx).astype(np.intp), w - 2)
    i = np.minimum(np.floor(gy).astype(np.intp), h - 2)
    fx = gx - j
    fy = gy - i
    dzdx = ((1 - fy) * (z[i, j + 1] - z[i, j]) + fy * (z[i + 1, j + 1] - z[i + 1, j])) / res
    dzdy = ((1 - fx) * (z[i + 1, j] - z[i, j]) + fx * (z[i + 1, j + 1] - z[i, j + 1])) / res
    g = np.stack([dzdx, dzdy], axis=1)
    return g[0] if single else g


def rocks_near(t: TerrainModel, p, pad: float = 0.0) -> np.ndarray:
    """Indices of rocks whose footprint (radius + pad) contains point p."""
    if not t.rocks:
        return np.zeros(0, dtype=np.intp)
    d = np.hypot(t.rock_centers[:, 0] - p[0], t.rock_centers[:, 1] - p[1])
    return np.nonzero(d <= t.rock_radii + pad)[0]


def true_cost_at(t: TerrainModel, p, w_slope: float = W_SLOPE,
                 small_penalty: float = SMALL_ROCK_PENALTY) -> float:
    """Ground-truth traversal cost used for evaluation only.

    Never fed to the planners.
    """
    pts, _ = _as_points(p)
    _check_inside(t, pts)
    x, y = pts[0]
    cost = w_slope * float(np.hypot(*elevation_gradient(t, (x, y))))
    for k in rocks_near(t, (x, y)):
        if t.rocks[k].rock_class == "medium":
            return C_MAX
        cost += small_penalty
    return cost


# ---------------------------------------------------------------------------
# config loading


def scenario_from_dict(d: dict[str, Any]) -> ScenarioSpec:
    rf = d.get("rock_field")
    rock_field = None
    if rf:
        hr = rf.get("height_range")
        rock_field = RockField(
            rect=tuple(float(v) for v in rf["rect"]),
            rock_class=rf.get("class", "small"),
            density=float(rf.get("density", 1.0)),
            height_range=tuple(float(v) for v in hr) if hr else None,
            rubble=float(rf.get("rubble", 0.0)),
        )
    craters = tuple(
        Crater(center=tuple(float(v) for v in c["center"]), radius=float(c["radius"]),
               depth=float(c["depth"]))
        for c in d.get("craters") or ()
    )
    spec = ScenarioSpec(
        seed=int(d.get("seed", 0)),
        extent=tuple(float(v) for v in d["extent_m"]),
        start=tuple(float(v) for v in d["start"]),
        goal=tuple(float(v) for v in d["goal"]),
        rock_field=rock_field,
        craters=craters,
        roughness=float(d.get("roughness", 0.0)),
        res_m=float(d.get("res_m", 0.5)),
        name=str(d.get("name", "scenario")),
        config=dict(d.get("config") or {}),
    )
    spec.validate()
    return spec


def load_scenario(path: str | Path) -> ScenarioSpec:
    """Load a ScenarioSpec from a YAML (or JSON) file."""
    with open(path) as f:
        d = yaml.safe_load(f)
    if not isinstance(d, dict):
        raise ValueError(f"{path}: expected a mapping at top level")
    d.setdefault("name", Path(path).stem)
    return scenario_from_dict(d)
